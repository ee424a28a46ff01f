#ifndef RAILS_ATTACKS_HPP
#define RAILS_ATTACKS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rails/class_index.hpp"
#include "rails/rng.hpp"
#include "rails/surrogate.hpp"
#include "rails/types.hpp"

namespace rails {

enum class AttackKind { kFgsm, kPgd, kKnnFeature };

AttackKind attack_kind_from_string(const std::string& name);
std::string to_string(AttackKind kind);

// Budgets are given on the 0-255 pixel scale and divided by 255 internally.
struct AttackSpec {
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 40.0;   // 0-255 scale
  int steps = 20;
  double step_size = 0.0;  // 0-1 scale; 0 picks 2.5 * eps / steps
  bool random_start = true;
  std::uint64_t seed = 1;

  double epsilon_unit() const { return epsilon / 255.0; }
  double resolved_step_size() const {
    return step_size > 0.0 ? step_size
                           : 2.5 * epsilon_unit() / static_cast<double>(steps);
  }
  void validate() const;
};

// One-step gradient-sign attack: clip(x + eps * sign(grad)).
Vector fgsm(const SurrogateModel& model, Eigen::Ref<const Vector> x, int y,
            double epsilon_unit);

// k-step projected gradient descent inside the l-inf ball around x.
Vector pgd(const SurrogateModel& model, Eigen::Ref<const Vector> x, int y,
           double epsilon_unit, int steps, double step_size_unit,
           bool random_start, Rng& rng);

// Gradient-free attack on the retrieval step: walk toward the mean of the
// k nearest points of the most-voted wrong class, stopping once the plain
// kNN vote flips away from y.
Vector knn_feature_attack(const ClassIndex& index, Eigen::Ref<const Vector> x,
                          int y, int k, double epsilon_unit, int steps,
                          double step_size_unit);

// Full adversarial set: one perturbed example per input column, float32
// with the ball and box constraints holding exactly on the stored values.
Eigen::MatrixXf generate_attack_set(const AttackSpec& spec,
                                    const SurrogateModel& model,
                                    const ClassIndex* index, const Matrix& x,
                                    const std::vector<std::uint16_t>& labels,
                                    int knn_k, unsigned threads);

struct AttackManifest {
  std::string kind;
  double epsilon = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
  std::uint32_t source_dataset_hash = 0;
};

// The adversarial set travels as a RAILSEMB payload plus a key=value
// manifest sidecar at path + ".manifest".
void save_attack_set(const std::string& path, const Eigen::MatrixXf& rows,
                     const AttackManifest& manifest);
std::pair<Eigen::MatrixXf, AttackManifest> load_attack_set(
    const std::string& path);

}  // namespace rails

#endif  // RAILS_ATTACKS_HPP
