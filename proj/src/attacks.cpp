#include "rails/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rails/data_io.hpp"
#include "rails/errors.hpp"
#include "rails/parallel.hpp"

namespace rails {

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "knn_feature") return AttackKind::kKnnFeature;
  throw ValidationError("unknown attack kind '" + name + "'");
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kKnnFeature: return "knn_feature";
  }
  return "unknown";
}

void AttackSpec::validate() const {
  if (epsilon < 0.0 || epsilon > 255.0) {
    throw ValidationError("attack: epsilon must lie in [0, 255]");
  }
  if (steps < 1) throw ValidationError("attack: steps must be >= 1");
  if (step_size < 0.0) throw ValidationError("attack: negative step size");
}

namespace {

// Project v into the l-inf ball around x intersected with the unit box.
void project(Vector& v, Eigen::Ref<const Vector> x, double eps) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double lo = std::max(0.0, x[i] - eps);
    const double hi = std::min(1.0, x[i] + eps);
    v[i] = std::min(hi, std::max(lo, v[i]));
  }
}

Vector sign_of(const Vector& g) {
  Vector s(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    s[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
  }
  return s;
}

}  // namespace

Vector fgsm(const SurrogateModel& model, Eigen::Ref<const Vector> x, int y,
            double epsilon_unit) {
  Vector adv = x + epsilon_unit * sign_of(loss_input_gradient(model, x, y));
  project(adv, x, epsilon_unit);
  return adv;
}

Vector pgd(const SurrogateModel& model, Eigen::Ref<const Vector> x, int y,
           double epsilon_unit, int steps, double step_size_unit,
           bool random_start, Rng& rng) {
  Vector adv = x;
  if (random_start && epsilon_unit > 0.0) {
    for (Eigen::Index i = 0; i < adv.size(); ++i) {
      adv[i] += rng.uniform(-epsilon_unit, epsilon_unit);
    }
    project(adv, x, epsilon_unit);
  }
  for (int s = 0; s < steps; ++s) {
    adv += step_size_unit * sign_of(loss_input_gradient(model, adv, y));
    project(adv, x, epsilon_unit);
  }
  return adv;
}

Vector knn_feature_attack(const ClassIndex& index, Eigen::Ref<const Vector> x,
                          int y, int k, double epsilon_unit, int steps,
                          double step_size_unit) {
  Vector adv = x;
  if (epsilon_unit == 0.0) return adv;
  for (int s = 0; s < steps; ++s) {
    const auto neighbors = index.query_global_knn(adv, k);
    std::vector<int> votes(static_cast<std::size_t>(index.class_count()), 0);
    for (const Neighbor& n : neighbors) ++votes[n.class_id];

    // Flip achieved: the plain kNN vote no longer prefers y.
    int top = 0;
    for (int c = 1; c < index.class_count(); ++c) {
      if (votes[c] > votes[top]) top = c;
    }
    if (top != y) break;

    // Most-voted wrong class among the current neighbors; when the
    // neighborhood is pure, fall back to the nearest foreign point.
    int target_class = -1;
    int best_votes = 0;
    for (int c = 0; c < index.class_count(); ++c) {
      if (c == y) continue;
      if (votes[c] > best_votes) {
        best_votes = votes[c];
        target_class = c;
      }
    }
    if (target_class < 0) {
      double best_aff = -std::numeric_limits<double>::infinity();
      const auto per_class = index.query_class_knn(adv, 1);
      for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (static_cast<int>(c) == y || per_class[c].empty()) continue;
        if (per_class[c][0].affinity > best_aff) {
          best_aff = per_class[c][0].affinity;
          target_class = static_cast<int>(c);
        }
      }
    }
    if (target_class < 0) break;  // single-class index, nothing to flip to

    const auto wrong = index.query_class_knn(adv, k)[
        static_cast<std::size_t>(target_class)];
    if (wrong.empty()) break;
    Vector mean = Vector::Zero(adv.size());
    for (const Neighbor& n : wrong) {
      mean += index.point(target_class, n.class_pos);
    }
    mean /= static_cast<double>(wrong.size());

    adv += step_size_unit * sign_of(mean - adv);
    project(adv, x, epsilon_unit);
  }
  return adv;
}

namespace {

// Narrow a double in [lo, hi] to float without escaping the interval.
float quantize_into(double v, double lo, double hi) {
  float f = static_cast<float>(std::min(hi, std::max(lo, v)));
  if (static_cast<double>(f) > hi) f = std::nextafterf(f, -2.0f);
  if (static_cast<double>(f) < lo) f = std::nextafterf(f, 2.0f);
  return f;
}

}  // namespace

Eigen::MatrixXf generate_attack_set(const AttackSpec& spec,
                                    const SurrogateModel& model,
                                    const ClassIndex* index, const Matrix& x,
                                    const std::vector<std::uint16_t>& labels,
                                    int knn_k, unsigned threads) {
  spec.validate();
  if (static_cast<std::size_t>(x.cols()) != labels.size()) {
    throw ValidationError("generate_attack_set: label count mismatch");
  }
  if (spec.kind == AttackKind::kKnnFeature && index == nullptr) {
    throw ValidationError("generate_attack_set: knn_feature needs an index");
  }
  const double eps = spec.epsilon_unit();
  const double step = spec.resolved_step_size();
  Eigen::MatrixXf out(x.rows(), x.cols());
  parallel_for(static_cast<std::size_t>(x.cols()), threads, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    const int y = labels[i];
    Vector adv;
    switch (spec.kind) {
      case AttackKind::kFgsm:
        adv = fgsm(model, x.col(col), y, eps);
        break;
      case AttackKind::kPgd: {
        Rng rng(derive_seed(spec.seed, {0x70676430ULL, i}));
        adv = pgd(model, x.col(col), y, eps, spec.steps, step,
                  spec.random_start, rng);
        break;
      }
      case AttackKind::kKnnFeature:
        adv = knn_feature_attack(*index, x.col(col), y, knn_k, eps,
                                 spec.steps, step);
        break;
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double lo = std::max(0.0, x(r, col) - eps);
      const double hi = std::min(1.0, x(r, col) + eps);
      out(r, col) = quantize_into(adv[r], lo, hi);
    }
  });
  return out;
}

void save_attack_set(const std::string& path, const Eigen::MatrixXf& rows,
                     const AttackManifest& manifest) {
  EmbeddingTable table;
  table.rows = rows;
  save_embeddings(path, table);
  std::ofstream out(path + ".manifest", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path + ".manifest");
  char eps[64];
  std::snprintf(eps, sizeof(eps), "%.17g", manifest.epsilon);
  out << "kind=" << manifest.kind << "\n"
      << "epsilon=" << eps << "\n"
      << "steps=" << manifest.steps << "\n"
      << "seed=" << manifest.seed << "\n"
      << "source_dataset_hash=" << manifest.source_dataset_hash << "\n";
  if (!out) throw IoError("manifest write failed: " + path + ".manifest");
}

std::pair<Eigen::MatrixXf, AttackManifest> load_attack_set(
    const std::string& path) {
  EmbeddingTable table = load_embeddings(path);
  std::ifstream in(path + ".manifest");
  if (!in) throw IoError("cannot open manifest: " + path + ".manifest");
  AttackManifest manifest;
  std::string line;
  while (std::getline(in, line)) {
    const auto at = line.find('=');
    if (at == std::string::npos) continue;
    const std::string key = line.substr(0, at);
    const std::string value = line.substr(at + 1);
    if (key == "kind") {
      manifest.kind = value;
    } else if (key == "epsilon") {
      manifest.epsilon = std::stod(value);
    } else if (key == "steps") {
      manifest.steps = std::stoi(value);
    } else if (key == "seed") {
      manifest.seed = std::stoull(value);
    } else if (key == "source_dataset_hash") {
      manifest.source_dataset_hash =
          static_cast<std::uint32_t>(std::stoul(value));
    } else {
      throw FormatError("unknown manifest key '" + key + "': " + path);
    }
  }
  if (manifest.kind.empty()) {
    throw FormatError("manifest missing attack kind: " + path);
  }
  return {std::move(table.rows), manifest};
}

}  // namespace rails
