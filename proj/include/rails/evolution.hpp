#ifndef RAILS_EVOLUTION_HPP
#define RAILS_EVOLUTION_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rails/rng.hpp"
#include "rails/types.hpp"

namespace rails {

struct EarlyStopConfig {
  bool enabled = false;
  double dominance = 0.9;  // share of the top slice one class must hold
  int patience = 3;        // consecutive generations before stopping
};

// All maturation tunables. Defaults are the paper-grade MNIST settings.
struct RailsConfig {
  int K = 10;   // neighbors per class from flocking
  int T = 100;  // population size per class
  int G = 50;   // maximum generations
  double rho = 0.15;        // per-offspring mutation probability
  double delta_min = 0.05;  // punctured-uniform magnitude bounds
  double delta_max = 0.15;
  double gamma_plasma = 0.05;
  double gamma_memory = 0.25;
  std::vector<std::string> layers{"input"};
  std::map<std::string, double> tau{{"input", 3.0}};
  EarlyStopConfig early_stop;
  // Eq.-level switch: false = one Bernoulli per offspring scaling the whole
  // perturbation vector; true = an independent Bernoulli per element.
  bool mutation_per_element = false;
  std::uint64_t seed = 1;

  void validate() const;
  double tau_for(const std::string& layer) const;
};

// Per-class candidate block. Column t is candidate t's feature vector;
// affinities are cached scores against the current input.
struct ClassPopulation {
  Matrix members;      // d x T
  Vector affinities;   // T
};

struct Population {
  std::vector<ClassPopulation> classes;
  int generation = 0;

  int class_count() const { return static_cast<int>(classes.size()); }
};

// Per-generation record of the pooled top-gamma_plasma slice: each class's
// share of the slice and the mean exponentiated affinity exp(A/tau) of that
// class's slice members (zero when the class is absent from the slice).
struct GenerationStats {
  int generation = 0;
  Vector class_share;
  Vector mean_exp_affinity;
};

struct MaturationResult {
  Population population;
  std::vector<GenerationStats> trace;
  int generations_run = 0;
  std::vector<int> padded_classes;  // classes with fewer than K neighbors
};

// Softmax of affinities at temperature tau, computed with a max shift.
Vector selection_probabilities(const Vector& affinities, double tau);

// 2T categorical draws (with replacement) from probs, paired in order.
std::vector<std::pair<int, int>> select_parent_pairs(const Vector& probs,
                                                     int count, Rng& rng);

// Element-wise parent selection: child[i] comes from xa with probability
// w_a / (w_a + w_b) where w = exp(affinity / tau), else from xb.
Vector crossover(Eigen::Ref<const Vector> xa, double affinity_a,
                 Eigen::Ref<const Vector> xb, double affinity_b, double tau,
                 Rng& rng);

// With probability rho adds i.i.d. punctured-uniform noise, then clips to
// [0,1]^d. per_element draws the Bernoulli independently per coordinate.
Vector mutate(Eigen::Ref<const Vector> x, double rho, double delta_min,
              double delta_max, bool per_element, Rng& rng);

// Generation 0: each flocking neighbor duplicated T/K times, every copy
// passed through mutate, affinities computed against the input. Classes
// with fewer than K neighbors are padded by cycling.
Population init_population(const std::vector<Matrix>& neighbors,
                           Eigen::Ref<const Vector> input,
                           const RailsConfig& cfg, std::vector<Rng>& class_rngs,
                           std::vector<int>* padded_classes = nullptr);

// One generation for every class independently: T children through
// select -> crossover -> mutate, affinities recomputed.
Population evolve_generation(const Population& pop,
                             Eigen::Ref<const Vector> input,
                             const RailsConfig& cfg, double tau,
                             std::vector<Rng>& class_rngs);

// Runs up to G generations with optional early stopping once one class
// holds >= dominance of the top-gamma_plasma slice for patience consecutive
// generations. stream_seed selects the independent RNG stream for this
// (input, layer) run.
MaturationResult run_affinity_maturation(Eigen::Ref<const Vector> input,
                                         const std::vector<Matrix>& neighbors,
                                         const RailsConfig& cfg, double tau,
                                         std::uint64_t stream_seed);

}  // namespace rails

#endif  // RAILS_EVOLUTION_HPP
