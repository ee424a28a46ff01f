#include "rails/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rails/errors.hpp"
#include "rails/rng.hpp"

namespace rails {

namespace {

// Column-wise softmax with max shift.
Matrix softmax_columns(Matrix logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
  return logits;
}

}  // namespace

Vector SurrogateModel::scores(Eigen::Ref<const Vector> x) const {
  const Vector hidden = (w1 * x + b1).cwiseMax(0.0);
  Vector logits = w2 * hidden + b2;
  logits.array() -= logits.maxCoeff();
  Vector p = logits.array().exp();
  p /= p.sum();
  return p;
}

Matrix SurrogateModel::scores_batch(const Matrix& x) const {
  Matrix hidden = ((w1 * x).colwise() + b1).cwiseMax(0.0);
  Matrix logits = (w2 * hidden).colwise() + b2;
  return softmax_columns(std::move(logits));
}

int SurrogateModel::predict(Eigen::Ref<const Vector> x) const {
  Eigen::Index arg = 0;
  scores(x).maxCoeff(&arg);
  return static_cast<int>(arg);
}

double SurrogateModel::accuracy(const Matrix& x,
                                const std::vector<std::uint16_t>& labels) const {
  if (static_cast<std::size_t>(x.cols()) != labels.size()) {
    throw ValidationError("surrogate accuracy: label count mismatch");
  }
  const Matrix p = scores_batch(x);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    Eigen::Index arg = 0;
    p.col(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.cols());
}

SurrogateModel train_surrogate(const Matrix& x,
                               const std::vector<std::uint16_t>& labels,
                               int class_count,
                               const SurrogateTrainOptions& opts) {
  const Eigen::Index n = x.cols();
  const Eigen::Index d = x.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) {
    throw ValidationError("train_surrogate: empty data or label mismatch");
  }
  if (opts.hidden < 1 || opts.batch_size < 1 || opts.epochs < 0) {
    throw ValidationError("train_surrogate: bad options");
  }

  Rng rng(derive_seed(opts.seed, {0x73757272ULL}));
  SurrogateModel m;
  m.w1.resize(opts.hidden, d);
  m.b1 = Vector::Zero(opts.hidden);
  m.w2.resize(class_count, opts.hidden);
  m.b2 = Vector::Zero(class_count);
  // He-style scaled uniform init.
  const double s1 = std::sqrt(6.0 / static_cast<double>(d));
  const double s2 = std::sqrt(6.0 / static_cast<double>(opts.hidden));
  for (Eigen::Index i = 0; i < m.w1.size(); ++i) {
    m.w1.data()[i] = rng.uniform(-s1, s1);
  }
  for (Eigen::Index i = 0; i < m.w2.size(); ++i) {
    m.w2.data()[i] = rng.uniform(-s2, s2);
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    // Fisher-Yates with the shared stream keeps runs reproducible.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.index(i)]);
    }
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += opts.batch_size) {
      const Eigen::Index b =
          std::min<Eigen::Index>(opts.batch_size, n - start);
      Matrix xb(d, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        xb.col(j) = x.col(order[static_cast<std::size_t>(start + j)]);
      }
      const Matrix z1 = (m.w1 * xb).colwise() + m.b1;
      const Matrix a1 = z1.cwiseMax(0.0);
      Matrix p = softmax_columns((m.w2 * a1).colwise() + m.b2);

      for (Eigen::Index j = 0; j < b; ++j) {
        const auto y = labels[static_cast<std::size_t>(
            order[static_cast<std::size_t>(start + j)])];
        epoch_loss -= std::log(std::max(p(y, j), 1e-300));
        p(y, j) -= 1.0;  // dL/dlogits = softmax - onehot
      }
      p /= static_cast<double>(b);

      const Matrix grad_w2 = p * a1.transpose();
      const Vector grad_b2 = p.rowwise().sum();
      Matrix back = m.w2.transpose() * p;
      back = (z1.array() > 0.0).select(back, 0.0);
      const Matrix grad_w1 = back * xb.transpose();
      const Vector grad_b1 = back.rowwise().sum();

      m.w2 -= opts.learning_rate * grad_w2;
      m.b2 -= opts.learning_rate * grad_b2;
      m.w1 -= opts.learning_rate * grad_w1;
      m.b1 -= opts.learning_rate * grad_b1;
    }
    if (!std::isfinite(epoch_loss)) {
      throw ValidationError("train_surrogate: loss diverged at epoch " +
                            std::to_string(epoch) + "; lower the learning rate");
    }
  }
  return m;
}

Vector loss_input_gradient(const SurrogateModel& model,
                           Eigen::Ref<const Vector> x, int y) {
  if (y < 0 || y >= model.class_count()) {
    throw ValidationError("loss_input_gradient: label out of range");
  }
  const Vector z1 = model.w1 * x + model.b1;
  const Vector a1 = z1.cwiseMax(0.0);
  Vector logits = model.w2 * a1 + model.b2;
  logits.array() -= logits.maxCoeff();
  Vector p = logits.array().exp();
  p /= p.sum();
  p[y] -= 1.0;
  Vector back = model.w2.transpose() * p;
  back = (z1.array() > 0.0).select(back, 0.0);
  return model.w1.transpose() * back;
}

double cross_entropy_loss(const SurrogateModel& model,
                          Eigen::Ref<const Vector> x, int y) {
  const Vector p = model.scores(x);
  return -std::log(std::max(p[y], 1e-300));
}

}  // namespace rails
