#ifndef RAILS_CONSENSUS_HPP
#define RAILS_CONSENSUS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rails/class_index.hpp"
#include "rails/evolution.hpp"
#include "rails/types.hpp"

namespace rails {

// A candidate's position in the pooled cross-class ranking.
struct RankedCandidate {
  int class_id = -1;
  int member = -1;       // column within its class block
  double affinity = 0.0;
};

// The ceil(gamma * N) candidates of greatest affinity pooled across all
// classes, in rank order. Ties break by (class id, creation order).
std::vector<RankedCandidate> select_top_fraction(
    const std::vector<const Vector*>& class_affinities, double gamma);

std::vector<RankedCandidate> select_top_fraction(const Population& pop,
                                                 double gamma);

inline std::vector<RankedCandidate> select_plasma(const Population& pop,
                                                  double gamma_plasma) {
  return select_top_fraction(pop, gamma_plasma);
}

// Memory is the longer prefix of the same ranking, harvested only from the
// final generation.
inline std::vector<RankedCandidate> select_memory(const Population& pop,
                                                  double gamma_memory) {
  return select_top_fraction(pop, gamma_memory);
}

struct Prediction {
  int predicted_class = -1;
  std::vector<int> votes;    // per class, sums to the pooled plasma size
  double confidence = 0.0;   // winning share
};

// One plasma member's contribution to the vote. exp_affinity is
// exp(A / tau) with the tau of the member's layer.
struct VoteBallot {
  std::uint16_t label = 0;
  double exp_affinity = 0.0;
};

// Class with the most inherited labels; ties go to the class with greater
// summed exp-affinity, then to the lower class id.
Prediction majority_vote(const std::vector<VoteBallot>& plasma,
                         int class_count);

// One maturation layer's inputs to the end-to-end prediction.
struct LayerInput {
  std::string layer_id;
  const ClassIndex* index = nullptr;
  Vector features;  // the test input mapped into this layer's space
};

struct RailsOutcome {
  Prediction prediction;
  MemoryStore memory;  // harvested entries across layers, tagged input_id
  std::vector<std::string> trace_layers;
  std::vector<std::vector<GenerationStats>> traces;
  std::vector<int> generations_run;
  bool any_padded_class = false;
};

// Full pipeline for one input: flock per layer, maturate per layer, pool
// plasma across layers, vote. input_id seeds the per-input RNG streams and
// tags harvested memory entries.
RailsOutcome rails_predict(const std::vector<LayerInput>& layers,
                           const RailsConfig& cfg, std::uint64_t input_id);

}  // namespace rails

#endif  // RAILS_CONSENSUS_HPP
