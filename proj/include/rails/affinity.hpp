#ifndef RAILS_AFFINITY_HPP
#define RAILS_AFFINITY_HPP

#include <Eigen/Core>

#include <cmath>

#include "rails/errors.hpp"

namespace rails {

// Affinity between two feature vectors: the negative Euclidean distance.
// Zero iff the vectors coincide, symmetric, never positive.
template <typename DerivedA, typename DerivedB>
double affinity(const Eigen::MatrixBase<DerivedA>& fa,
                const Eigen::MatrixBase<DerivedB>& fb) {
  if (fa.size() != fb.size()) {
    throw ValidationError("affinity: dimension mismatch (" +
                          std::to_string(fa.size()) + " vs " +
                          std::to_string(fb.size()) + ")");
  }
  return -std::sqrt((fa.derived().template cast<double>() -
                     fb.derived().template cast<double>())
                        .squaredNorm());
}

// Squared Euclidean distance, the ranking key used by the index scans.
// Ordering by it equals ordering by affinity.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& fa,
                        const Eigen::MatrixBase<DerivedB>& fb) {
  return (fa.derived().template cast<double>() -
          fb.derived().template cast<double>())
      .squaredNorm();
}

}  // namespace rails

#endif  // RAILS_AFFINITY_HPP
