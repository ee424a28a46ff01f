#ifndef RAILS_TYPES_HPP
#define RAILS_TYPES_HPP

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace rails {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One input point: a feature column in [0,1]^d plus a class label.
struct Example {
  Vector features;
  int label = -1;
};

// A dataset. Features are column-per-example (d x n), labels aligned by
// column index. Labels may be absent (empty) for image-only loads.
struct ExampleSet {
  Matrix features;               // d x n
  std::vector<std::uint16_t> labels;
  int class_count = 0;

  Eigen::Index dim() const { return features.rows(); }
  Eigen::Index size() const { return features.cols(); }
  bool has_labels() const { return !labels.empty(); }
};

// Precomputed feature rows for one layer, aligned by example index with the
// dataset they annotate. Stored as float to round-trip the on-disk format
// bit-exactly.
struct EmbeddingTable {
  std::string layer_id;
  Eigen::MatrixXf rows;          // dim x count, column per example

  Eigen::Index dim() const { return rows.rows(); }
  Eigen::Index size() const { return rows.cols(); }
};

// Persisted moderate-affinity examples harvested by consensus. Features are
// float32 (the persisted precision) so save->load is an exact identity.
struct MemoryStore {
  static constexpr std::uint32_t kFormatVersion = 1;

  Eigen::MatrixXf features;      // d x n
  std::vector<std::uint16_t> labels;
  std::vector<std::string> layer_names;     // string table
  std::vector<std::uint16_t> layer_index;   // per entry, into layer_names
  std::vector<std::uint32_t> creation_tags; // per entry
  std::uint32_t format_version = kFormatVersion;

  Eigen::Index size() const { return features.cols(); }
  const std::string& layer_of(Eigen::Index i) const {
    return layer_names[layer_index[static_cast<std::size_t>(i)]];
  }
};

}  // namespace rails

#endif  // RAILS_TYPES_HPP
