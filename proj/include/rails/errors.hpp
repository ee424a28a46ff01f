#ifndef RAILS_ERRORS_HPP
#define RAILS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rails {

// Semantic inputs that do not add up: bad labels, mismatched counts,
// inconsistent configs. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and stream failures: missing files, truncated payloads.
// Maps to CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file that opened fine but is not in the expected format (bad magic,
// unknown version, corrupt checksum). Treated as an I/O failure by the CLI.
class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

}  // namespace rails

#endif  // RAILS_ERRORS_HPP
