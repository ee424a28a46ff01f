#include "rails/evolution.hpp"

#include <algorithm>
#include <cmath>

#include "rails/affinity.hpp"
#include "rails/consensus.hpp"
#include "rails/errors.hpp"

namespace rails {

void RailsConfig::validate() const {
  if (K < 1 || T < 1 || G < 0) {
    throw ValidationError("rails config: K, T must be positive and G >= 0");
  }
  if (T % K != 0) {
    throw ValidationError("rails config: T (" + std::to_string(T) +
                          ") must be divisible by K (" + std::to_string(K) +
                          ")");
  }
  if (rho < 0.0 || rho > 1.0) {
    throw ValidationError("rails config: rho must lie in [0,1]");
  }
  if (!(delta_min > 0.0 && delta_min <= delta_max && delta_max <= 1.0)) {
    throw ValidationError("rails config: need 0 < delta_min <= delta_max <= 1");
  }
  if (!(gamma_plasma > 0.0 && gamma_plasma <= gamma_memory &&
        gamma_memory <= 1.0)) {
    throw ValidationError(
        "rails config: need 0 < gamma_plasma <= gamma_memory <= 1");
  }
  if (layers.empty()) {
    throw ValidationError("rails config: layer set is empty");
  }
  for (const std::string& l : layers) {
    if (tau_for(l) <= 0.0) {
      throw ValidationError("rails config: tau for layer '" + l +
                            "' must be positive");
    }
  }
  if (early_stop.enabled &&
      (early_stop.dominance <= 0.0 || early_stop.dominance > 1.0 ||
       early_stop.patience < 1)) {
    throw ValidationError("rails config: bad early-stop settings");
  }
}

double RailsConfig::tau_for(const std::string& layer) const {
  auto it = tau.find(layer);
  if (it == tau.end()) {
    throw ValidationError("rails config: no tau configured for layer '" +
                          layer + "'");
  }
  return it->second;
}

Vector selection_probabilities(const Vector& affinities, double tau) {
  if (tau <= 0.0) {
    throw ValidationError("selection_probabilities: tau must be positive");
  }
  const double shift = affinities.maxCoeff();
  Vector p = ((affinities.array() - shift) / tau).exp();
  p /= p.sum();
  return p;
}

namespace {

// Inclusive-prefix CDF sampling: first index whose cumulative mass exceeds u.
std::vector<double> cumulative(const Vector& probs) {
  std::vector<double> cdf(static_cast<std::size_t>(probs.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  cdf.back() = 1.0;  // guard against rounding shortfall
  return cdf;
}

int draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.unit();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1));
}

}  // namespace

std::vector<std::pair<int, int>> select_parent_pairs(const Vector& probs,
                                                     int count, Rng& rng) {
  const std::vector<double> cdf = cumulative(probs);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    const int a = draw(cdf, rng);
    const int b = draw(cdf, rng);
    pairs.emplace_back(a, b);
  }
  return pairs;
}

Vector crossover(Eigen::Ref<const Vector> xa, double affinity_a,
                 Eigen::Ref<const Vector> xb, double affinity_b, double tau,
                 Rng& rng) {
  if (xa.size() != xb.size()) {
    throw ValidationError("crossover: parent dimension mismatch");
  }
  // w_a / (w_a + w_b) with w = exp(A / tau), in logistic form so very
  // negative affinities stay stable.
  const double p_a = 1.0 / (1.0 + std::exp((affinity_b - affinity_a) / tau));
  Vector child(xa.size());
  for (Eigen::Index i = 0; i < xa.size(); ++i) {
    child[i] = rng.unit() < p_a ? xa[i] : xb[i];
  }
  return child;
}

Vector mutate(Eigen::Ref<const Vector> x, double rho, double delta_min,
              double delta_max, bool per_element, Rng& rng) {
  Vector out = x;
  if (per_element) {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (rng.bernoulli(rho)) {
        out[i] += rng.punctured_uniform(delta_min, delta_max);
      }
    }
  } else if (rng.bernoulli(rho)) {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out[i] += rng.punctured_uniform(delta_min, delta_max);
    }
  }
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

Population init_population(const std::vector<Matrix>& neighbors,
                           Eigen::Ref<const Vector> input,
                           const RailsConfig& cfg,
                           std::vector<Rng>& class_rngs,
                           std::vector<int>* padded_classes) {
  cfg.validate();
  const int copies = cfg.T / cfg.K;
  Population pop;
  pop.generation = 0;
  pop.classes.resize(neighbors.size());
  for (std::size_t c = 0; c < neighbors.size(); ++c) {
    const Matrix& found = neighbors[c];
    if (found.cols() == 0) {
      throw ValidationError("init_population: class " + std::to_string(c) +
                            " has no neighbors");
    }
    if (found.cols() < cfg.K && padded_classes != nullptr) {
      padded_classes->push_back(static_cast<int>(c));
    }
    ClassPopulation& cp = pop.classes[c];
    cp.members.resize(input.size(), cfg.T);
    cp.affinities.resize(cfg.T);
    Rng& rng = class_rngs[c];
    int t = 0;
    for (int k = 0; k < cfg.K; ++k) {
      // Cycle when the class has fewer than K neighbors.
      const Eigen::Index src = k % found.cols();
      for (int dup = 0; dup < copies; ++dup, ++t) {
        cp.members.col(t) = mutate(found.col(src), cfg.rho, cfg.delta_min,
                                   cfg.delta_max, cfg.mutation_per_element,
                                   rng);
        cp.affinities[t] = affinity(cp.members.col(t), input);
      }
    }
  }
  return pop;
}

Population evolve_generation(const Population& pop,
                             Eigen::Ref<const Vector> input,
                             const RailsConfig& cfg, double tau,
                             std::vector<Rng>& class_rngs) {
  Population next;
  next.generation = pop.generation + 1;
  next.classes.resize(pop.classes.size());
  for (std::size_t c = 0; c < pop.classes.size(); ++c) {
    const ClassPopulation& cur = pop.classes[c];
    ClassPopulation& out = next.classes[c];
    out.members.resize(cur.members.rows(), cfg.T);
    out.affinities.resize(cfg.T);
    Rng& rng = class_rngs[c];
    const Vector probs = selection_probabilities(cur.affinities, tau);
    const auto pairs = select_parent_pairs(probs, cfg.T, rng);
    for (int t = 0; t < cfg.T; ++t) {
      const auto [a, b] = pairs[static_cast<std::size_t>(t)];
      Vector child =
          crossover(cur.members.col(a), cur.affinities[a], cur.members.col(b),
                    cur.affinities[b], tau, rng);
      out.members.col(t) = mutate(child, cfg.rho, cfg.delta_min, cfg.delta_max,
                                  cfg.mutation_per_element, rng);
      out.affinities[t] = affinity(out.members.col(t), input);
    }
  }
  return next;
}

namespace {

GenerationStats slice_stats(const Population& pop, const RailsConfig& cfg,
                            double tau) {
  const auto slice = select_top_fraction(pop, cfg.gamma_plasma);
  GenerationStats stats;
  stats.generation = pop.generation;
  const int C = pop.class_count();
  stats.class_share = Vector::Zero(C);
  stats.mean_exp_affinity = Vector::Zero(C);
  for (const RankedCandidate& rc : slice) {
    stats.class_share[rc.class_id] += 1.0;
    stats.mean_exp_affinity[rc.class_id] += std::exp(rc.affinity / tau);
  }
  for (int c = 0; c < C; ++c) {
    if (stats.class_share[c] > 0.0) {
      stats.mean_exp_affinity[c] /= stats.class_share[c];
    }
  }
  stats.class_share /= static_cast<double>(slice.size());
  return stats;
}

}  // namespace

MaturationResult run_affinity_maturation(Eigen::Ref<const Vector> input,
                                         const std::vector<Matrix>& neighbors,
                                         const RailsConfig& cfg, double tau,
                                         std::uint64_t stream_seed) {
  cfg.validate();
  MaturationResult result;
  std::vector<Rng> class_rngs;
  class_rngs.reserve(neighbors.size());
  for (std::size_t c = 0; c < neighbors.size(); ++c) {
    class_rngs.emplace_back(derive_seed(stream_seed, {0x636c6173ULL, c}));
  }
  result.population = init_population(neighbors, input, cfg, class_rngs,
                                      &result.padded_classes);
  result.trace.push_back(slice_stats(result.population, cfg, tau));

  int dominant_class = -1;
  int streak = 0;
  for (int g = 1; g <= cfg.G; ++g) {
    result.population =
        evolve_generation(result.population, input, cfg, tau, class_rngs);
    ++result.generations_run;
    const GenerationStats stats = slice_stats(result.population, cfg, tau);
    result.trace.push_back(stats);
    if (cfg.early_stop.enabled) {
      int top_class = 0;
      stats.class_share.maxCoeff(&top_class);
      if (stats.class_share[top_class] >= cfg.early_stop.dominance) {
        streak = (top_class == dominant_class) ? streak + 1 : 1;
        dominant_class = top_class;
        if (streak >= cfg.early_stop.patience) break;
      } else {
        dominant_class = -1;
        streak = 0;
      }
    }
  }
  return result;
}

}  // namespace rails
