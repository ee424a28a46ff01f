#include "rails/class_index.hpp"

#include <algorithm>
#include <cmath>

#include "rails/errors.hpp"

namespace rails {

namespace {

struct Scored {
  double dist2;
  Eigen::Index class_pos;
  Eigen::Index storage;
};

bool closer(const Scored& a, const Scored& b) {
  if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
  return a.storage < b.storage;
}

}  // namespace

ClassIndex::ClassIndex(const ExampleSet& set, std::string layer_id,
                       const EmbeddingTable* embeddings,
                       const MemoryStore* memory)
    : layer_id_(std::move(layer_id)) {
  if (!set.has_labels()) {
    throw ValidationError("class index: dataset has no labels");
  }
  if (embeddings != nullptr && embeddings->size() != set.size()) {
    throw ValidationError(
        "class index: embedding rows not aligned with dataset (" +
        std::to_string(embeddings->size()) + " vs " +
        std::to_string(set.size()) + ")");
  }
  dim_ = embeddings != nullptr ? embeddings->dim() : set.dim();
  const int C = set.class_count;
  classes_.resize(static_cast<std::size_t>(C));

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(C), 0);
  for (std::uint16_t l : set.labels) ++counts[l];
  std::vector<Eigen::Index> memory_rows;
  if (memory != nullptr) {
    for (Eigen::Index i = 0; i < memory->size(); ++i) {
      if (memory->layer_of(i) != layer_id_) continue;
      if (memory->features.rows() != dim_) {
        throw ValidationError("class index: memory entry dim mismatch for layer " +
                              layer_id_);
      }
      const std::uint16_t l = memory->labels[static_cast<std::size_t>(i)];
      if (l >= C) {
        throw ValidationError("class index: memory entry label out of range");
      }
      ++counts[l];
      memory_rows.push_back(i);
    }
  }
  for (int c = 0; c < C; ++c) {
    auto& block = classes_[static_cast<std::size_t>(c)];
    block.points.resize(dim_, counts[static_cast<std::size_t>(c)]);
    block.storage.reserve(static_cast<std::size_t>(counts[c]));
    block.from_memory.reserve(static_cast<std::size_t>(counts[c]));
  }
  std::vector<Eigen::Index> fill(static_cast<std::size_t>(C), 0);
  Eigen::Index storage = 0;
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const std::uint16_t l = set.labels[static_cast<std::size_t>(i)];
    auto& block = classes_[l];
    if (embeddings != nullptr) {
      block.points.col(fill[l]) = embeddings->rows.col(i).cast<double>();
    } else {
      block.points.col(fill[l]) = set.features.col(i);
    }
    block.storage.push_back(storage++);
    block.from_memory.push_back(0);
    ++fill[l];
  }
  if (memory != nullptr) {
    for (Eigen::Index i : memory_rows) {
      const std::uint16_t l = memory->labels[static_cast<std::size_t>(i)];
      auto& block = classes_[l];
      block.points.col(fill[l]) = memory->features.col(i).cast<double>();
      block.storage.push_back(storage++);
      block.from_memory.push_back(1);
      ++fill[l];
    }
  }
  total_ = storage;
}

std::vector<std::vector<Neighbor>> ClassIndex::query_class_knn(
    Eigen::Ref<const Vector> x, int k) const {
  if (k < 1) throw ValidationError("query_class_knn: k must be >= 1");
  if (x.size() != dim_) {
    throw ValidationError("query_class_knn: query dim mismatch");
  }
  std::vector<std::vector<Neighbor>> result(classes_.size());
  std::vector<Scored> scored;
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    const ClassBlock& block = classes_[c];
    const Eigen::Index n = block.points.cols();
    scored.clear();
    scored.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      scored.push_back(
          {(block.points.col(i) - x).squaredNorm(), i, block.storage[i]});
    }
    const auto take = static_cast<std::size_t>(
        std::min<Eigen::Index>(k, n));
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                      closer);
    auto& out = result[c];
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      out.push_back({-std::sqrt(scored[i].dist2), static_cast<int>(c),
                     scored[i].storage, scored[i].class_pos,
                     block.from_memory[scored[i].class_pos] != 0});
    }
  }
  return result;
}

std::vector<Neighbor> ClassIndex::query_global_knn(Eigen::Ref<const Vector> x,
                                                   int k) const {
  // The global top-k is contained in the union of per-class top-k lists.
  auto per_class = query_class_knn(x, k);
  std::vector<Neighbor> pool;
  for (auto& list : per_class) {
    pool.insert(pool.end(), list.begin(), list.end());
  }
  std::sort(pool.begin(), pool.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.affinity != b.affinity) return a.affinity > b.affinity;
    return a.storage_index < b.storage_index;
  });
  if (pool.size() > static_cast<std::size_t>(k)) {
    pool.resize(static_cast<std::size_t>(k));
  }
  return pool;
}

}  // namespace rails
