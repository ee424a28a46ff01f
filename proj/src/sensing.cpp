#include "rails/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rails/errors.hpp"

namespace rails {

Vector knn_class_histogram(const ClassIndex& index,
                           Eigen::Ref<const Vector> x, int k, double alpha) {
  if (k < 1) throw ValidationError("knn_class_histogram: k must be >= 1");
  if (index.total_size() == 0) {
    throw ValidationError("knn_class_histogram: empty index");
  }
  if (alpha < 0.0) {
    throw ValidationError("knn_class_histogram: alpha must be >= 0");
  }
  const int C = index.class_count();
  const auto neighbors = index.query_global_knn(x, k);
  Vector counts = Vector::Zero(C);
  for (const Neighbor& n : neighbors) counts[n.class_id] += 1.0;
  const double denom =
      static_cast<double>(neighbors.size()) + alpha * static_cast<double>(C);
  return (counts.array() + alpha) / denom;
}

double threat_score(const Vector& reference_scores,
                    const std::vector<Vector>& histograms) {
  if (std::abs(reference_scores.sum() - 1.0) > 1e-6 ||
      reference_scores.minCoeff() < 0.0) {
    throw ValidationError("threat_score: reference scores not a probability "
                          "vector");
  }
  if (histograms.empty()) {
    throw ValidationError("threat_score: no layer histograms");
  }
  double total = 0.0;
  for (const Vector& v : histograms) {
    if (v.size() != reference_scores.size()) {
      throw ValidationError("threat_score: histogram class count mismatch");
    }
    double ce = 0.0;
    for (Eigen::Index c = 0; c < v.size(); ++c) {
      if (reference_scores[c] > 0.0) {
        ce -= reference_scores[c] * std::log(v[c]);
      }
    }
    total += ce;
  }
  return total / static_cast<double>(histograms.size());
}

SenseResult sense(const Vector& reference_scores,
                  const std::vector<Vector>& histograms, double kappa) {
  if (kappa < 0.0) throw ValidationError("sense: kappa must be >= 0");
  SenseResult result;
  result.score = threat_score(reference_scores, histograms);
  result.suspicious = result.score > kappa;
  Eigen::Index arg = 0;
  reference_scores.maxCoeff(&arg);
  result.reference_prediction = static_cast<int>(arg);
  return result;
}

RocCurve roc_curve(const std::vector<double>& benign_scores,
                   const std::vector<double>& adversarial_scores) {
  if (benign_scores.empty() || adversarial_scores.empty()) {
    throw ValidationError("roc_curve: both score lists must be nonempty");
  }
  // Sweep thresholds downward across all observed scores; detection fires
  // on score > threshold. Tied scores move both rates together, which the
  // trapezoid rule credits as half, matching the pairwise statistic.
  std::vector<double> thresholds;
  thresholds.reserve(benign_scores.size() + adversarial_scores.size());
  thresholds.insert(thresholds.end(), benign_scores.begin(),
                    benign_scores.end());
  thresholds.insert(thresholds.end(), adversarial_scores.begin(),
                    adversarial_scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double nb = static_cast<double>(benign_scores.size());
  const double na = static_cast<double>(adversarial_scores.size());
  auto rate_above = [](const std::vector<double>& scores, double thr) {
    std::size_t count = 0;
    for (double s : scores) count += s > thr ? 1 : 0;
    return static_cast<double>(count);
  };

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double prev_fpr = 0.0;
  double prev_tpr = 0.0;
  for (double thr : thresholds) {
    const double fpr = rate_above(benign_scores, thr) / nb;
    const double tpr = rate_above(adversarial_scores, thr) / na;
    curve.auc += (fpr - prev_fpr) * 0.5 * (tpr + prev_tpr);
    curve.points.push_back({thr, fpr, tpr});
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  // Close the staircase at (1, 1).
  curve.auc += (1.0 - prev_fpr) * 0.5 * (1.0 + prev_tpr);
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return curve;
}

}  // namespace rails
