#ifndef RAILS_SURROGATE_HPP
#define RAILS_SURROGATE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rails/types.hpp"

namespace rails {

// One-hidden-layer rectifier network with softmax outputs. Stands in for a
// CNN as the white-box gradient source for attacks and the reference
// classifier for sensing. Weights are immutable after training.
struct SurrogateModel {
  Matrix w1;  // hidden x input
  Vector b1;
  Matrix w2;  // classes x hidden
  Vector b2;

  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  int class_count() const { return static_cast<int>(w2.rows()); }

  // Softmax class scores for a single input (sums to 1).
  Vector scores(Eigen::Ref<const Vector> x) const;
  // Softmax scores for a batch (column per input).
  Matrix scores_batch(const Matrix& x) const;
  int predict(Eigen::Ref<const Vector> x) const;
  double accuracy(const Matrix& x,
                  const std::vector<std::uint16_t>& labels) const;
};

struct SurrogateTrainOptions {
  int hidden = 256;
  int epochs = 12;
  double learning_rate = 0.1;
  int batch_size = 128;
  std::uint64_t seed = 1;
};

// Minimizes cross-entropy by mini-batch gradient descent with an explicit
// backward pass. Deterministic under the seed; throws if the loss ever
// turns non-finite.
SurrogateModel train_surrogate(const Matrix& x,
                               const std::vector<std::uint16_t>& labels,
                               int class_count,
                               const SurrogateTrainOptions& opts);

// Gradient of the cross-entropy loss at (x, y) with respect to the input.
Vector loss_input_gradient(const SurrogateModel& model,
                           Eigen::Ref<const Vector> x, int y);

double cross_entropy_loss(const SurrogateModel& model,
                          Eigen::Ref<const Vector> x, int y);

}  // namespace rails

#endif  // RAILS_SURROGATE_HPP
