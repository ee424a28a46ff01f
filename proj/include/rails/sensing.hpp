#ifndef RAILS_SENSING_HPP
#define RAILS_SENSING_HPP

#include <vector>

#include "rails/class_index.hpp"
#include "rails/types.hpp"

namespace rails {

// Smoothed class histogram of the k global nearest neighbors of x:
// entry c is (r_c + alpha) / (k + alpha * C).
Vector knn_class_histogram(const ClassIndex& index,
                           Eigen::Ref<const Vector> x, int k, double alpha);

// Adversarial threat score: the mean over layers of the cross-entropy
// between reference scores F and each layer's kNN histogram,
// -sum_c F_c log v_c. F must be a probability vector (tolerance 1e-6).
double threat_score(const Vector& reference_scores,
                    const std::vector<Vector>& histograms);

struct SenseResult {
  bool suspicious = false;
  double score = 0.0;
  int reference_prediction = -1;  // argmax of F; the answer when benign
};

// Threshold gate: scores above kappa route the input into the full
// pipeline, everything else keeps the reference prediction.
SenseResult sense(const Vector& reference_scores,
                  const std::vector<Vector>& histograms, double kappa);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Threshold sweep over both score sets (adversarial = positive class,
// detection fires on score > threshold), AUC by the trapezoid rule.
RocCurve roc_curve(const std::vector<double>& benign_scores,
                   const std::vector<double>& adversarial_scores);

}  // namespace rails

#endif  // RAILS_SENSING_HPP
