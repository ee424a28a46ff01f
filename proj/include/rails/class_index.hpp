#ifndef RAILS_CLASS_INDEX_HPP
#define RAILS_CLASS_INDEX_HPP

#include <optional>
#include <string>
#include <vector>

#include "rails/types.hpp"

namespace rails {

// One retrieved neighbor. storage_index orders points by insertion
// (training rows in dataset order, then memory entries) and is the
// deterministic tie-break for equal affinities.
struct Neighbor {
  double affinity = 0.0;
  int class_id = -1;
  Eigen::Index storage_index = -1;   // global insertion order
  Eigen::Index class_pos = -1;       // position within the class block
  bool from_memory = false;
};

// Class-wise exact nearest-neighbor structure over one feature layer.
// Immutable after construction; concurrent queries are safe.
class ClassIndex {
 public:
  // Builds the index over the dataset's own features, or over the given
  // embedding table (aligned by example index). Memory entries whose layer
  // matches layer_id are appended after the training rows and carry their
  // inherited labels.
  ClassIndex(const ExampleSet& set, std::string layer_id,
             const EmbeddingTable* embeddings = nullptr,
             const MemoryStore* memory = nullptr);

  const std::string& layer_id() const { return layer_id_; }
  int class_count() const { return static_cast<int>(classes_.size()); }
  Eigen::Index dim() const { return dim_; }
  Eigen::Index class_size(int c) const {
    return classes_[static_cast<std::size_t>(c)].points.cols();
  }
  Eigen::Index total_size() const { return total_; }

  // The stored feature column for a retrieved neighbor.
  Eigen::Ref<const Vector> point(int class_id, Eigen::Index class_pos) const {
    return classes_[static_cast<std::size_t>(class_id)].points.col(class_pos);
  }

  // For each class independently, the min(K, n_c) stored points with the
  // greatest affinity to x, sorted by non-increasing affinity with ties
  // broken by lower storage index. Empty classes yield empty lists.
  std::vector<std::vector<Neighbor>> query_class_knn(
      Eigen::Ref<const Vector> x, int k) const;

  // The k nearest points across all classes jointly (same ordering rules).
  std::vector<Neighbor> query_global_knn(Eigen::Ref<const Vector> x,
                                         int k) const;

 private:
  struct ClassBlock {
    Matrix points;                           // dim x n_c
    std::vector<Eigen::Index> storage;       // global insertion order
    std::vector<std::uint8_t> from_memory;
  };

  std::string layer_id_;
  Eigen::Index dim_ = 0;
  Eigen::Index total_ = 0;
  std::vector<ClassBlock> classes_;
};

}  // namespace rails

#endif  // RAILS_CLASS_INDEX_HPP
