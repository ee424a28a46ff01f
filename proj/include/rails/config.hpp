#ifndef RAILS_CONFIG_HPP
#define RAILS_CONFIG_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace rails {

// Flat key=value configuration with section prefixes (rails.T=100).
// '#' starts a comment, blank lines are ignored. Consumed keys are
// tracked so typos surface as errors instead of silent defaults.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::string& fallback) const;

  // Overrides (CLI flags) replace or insert a value.
  void set(const std::string& key, const std::string& value);

  // All keys starting with prefix, sorted; marks them consumed.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  // Keys never read by any getter; nonempty means the config has entries
  // the run did not understand.
  std::vector<std::string> unconsumed() const;

  // Sorted key=value echo for run manifests.
  std::vector<std::string> echo() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace rails

#endif  // RAILS_CONFIG_HPP
