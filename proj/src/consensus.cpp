#include "rails/consensus.hpp"

#include <algorithm>
#include <cmath>

#include "rails/errors.hpp"

namespace rails {

std::vector<RankedCandidate> select_top_fraction(
    const std::vector<const Vector*>& class_affinities, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ValidationError("select_top_fraction: gamma must lie in (0,1]");
  }
  std::size_t total = 0;
  for (const Vector* v : class_affinities) {
    total += static_cast<std::size_t>(v->size());
  }
  std::vector<RankedCandidate> pool;
  pool.reserve(total);
  for (std::size_t c = 0; c < class_affinities.size(); ++c) {
    const Vector& aff = *class_affinities[c];
    for (Eigen::Index t = 0; t < aff.size(); ++t) {
      pool.push_back({static_cast<int>(c), static_cast<int>(t), aff[t]});
    }
  }
  const auto take = static_cast<std::size_t>(
      std::ceil(gamma * static_cast<double>(total)));
  auto better = [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.affinity != b.affinity) return a.affinity > b.affinity;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return a.member < b.member;
  };
  std::partial_sort(pool.begin(), pool.begin() + std::min(take, pool.size()),
                    pool.end(), better);
  pool.resize(std::min(take, pool.size()));
  return pool;
}

std::vector<RankedCandidate> select_top_fraction(const Population& pop,
                                                 double gamma) {
  std::vector<const Vector*> affs;
  affs.reserve(pop.classes.size());
  for (const ClassPopulation& cp : pop.classes) {
    affs.push_back(&cp.affinities);
  }
  return select_top_fraction(affs, gamma);
}

Prediction majority_vote(const std::vector<VoteBallot>& plasma,
                         int class_count) {
  if (plasma.empty()) {
    throw ValidationError("majority_vote: empty plasma set");
  }
  Prediction pred;
  pred.votes.assign(static_cast<std::size_t>(class_count), 0);
  std::vector<double> weight(static_cast<std::size_t>(class_count), 0.0);
  for (const VoteBallot& b : plasma) {
    if (b.label >= class_count) {
      throw ValidationError("majority_vote: ballot label out of range");
    }
    ++pred.votes[b.label];
    weight[b.label] += b.exp_affinity;
  }
  int best = 0;
  for (int c = 1; c < class_count; ++c) {
    if (pred.votes[c] > pred.votes[best] ||
        (pred.votes[c] == pred.votes[best] && weight[c] > weight[best])) {
      best = c;
    }
  }
  pred.predicted_class = best;
  pred.confidence = static_cast<double>(pred.votes[best]) /
                    static_cast<double>(plasma.size());
  return pred;
}

RailsOutcome rails_predict(const std::vector<LayerInput>& layers,
                           const RailsConfig& cfg, std::uint64_t input_id) {
  cfg.validate();
  if (layers.empty()) {
    throw ValidationError("rails_predict: no layers supplied");
  }
  RailsOutcome outcome;
  int class_count = 0;
  std::vector<VoteBallot> pooled_plasma;
  MemoryStore& memory = outcome.memory;

  for (const LayerInput& layer : layers) {
    if (layer.index == nullptr) {
      throw ValidationError("rails_predict: missing index for layer " +
                            layer.layer_id);
    }
    class_count = layer.index->class_count();
    const double tau = cfg.tau_for(layer.layer_id);

    // Flocking: class-wise kNN with the highest affinity to the input.
    const auto found = layer.index->query_class_knn(layer.features, cfg.K);
    std::vector<Matrix> neighbors(found.size());
    for (std::size_t c = 0; c < found.size(); ++c) {
      neighbors[c].resize(layer.index->dim(),
                          static_cast<Eigen::Index>(found[c].size()));
      for (std::size_t i = 0; i < found[c].size(); ++i) {
        neighbors[c].col(static_cast<Eigen::Index>(i)) = layer.index->point(
            static_cast<int>(c), found[c][i].class_pos);
      }
    }

    const std::uint64_t stream =
        derive_seed(cfg.seed, {hash_str(layer.layer_id), input_id});
    MaturationResult matured = run_affinity_maturation(
        layer.features, neighbors, cfg, tau, stream);
    outcome.any_padded_class |= !matured.padded_classes.empty();
    outcome.generations_run.push_back(matured.generations_run);

    const Population& final_pop = matured.population;
    const auto memory_ranked = select_memory(final_pop, cfg.gamma_memory);
    const auto plasma_size = static_cast<std::size_t>(std::ceil(
        cfg.gamma_plasma * static_cast<double>(cfg.T * final_pop.class_count())));

    // Plasma is the prefix of the memory ranking; pool it for the vote.
    for (std::size_t i = 0; i < memory_ranked.size() && i < plasma_size; ++i) {
      const RankedCandidate& rc = memory_ranked[i];
      pooled_plasma.push_back({static_cast<std::uint16_t>(rc.class_id),
                               std::exp(rc.affinity / tau)});
    }

    // Harvest memory entries for persistence. The store format carries one
    // dimension, so all layers sharing a store must agree on it.
    if (memory.features.rows() != 0 &&
        memory.features.rows() != layer.index->dim()) {
      throw ValidationError(
          "rails_predict: layers with differing dims cannot share one "
          "memory store");
    }
    const auto layer_slot = static_cast<std::uint16_t>(memory.layer_names.size());
    memory.layer_names.push_back(layer.layer_id);
    const Eigen::Index old_cols = memory.features.cols();
    if (memory.features.rows() == 0) {
      memory.features.resize(layer.index->dim(), 0);
    }
    memory.features.conservativeResize(
        memory.features.rows(),
        old_cols + static_cast<Eigen::Index>(memory_ranked.size()));
    for (std::size_t i = 0; i < memory_ranked.size(); ++i) {
      const RankedCandidate& rc = memory_ranked[i];
      memory.features.col(old_cols + static_cast<Eigen::Index>(i)) =
          final_pop.classes[static_cast<std::size_t>(rc.class_id)]
              .members.col(rc.member)
              .cast<float>();
      memory.labels.push_back(static_cast<std::uint16_t>(rc.class_id));
      memory.layer_index.push_back(layer_slot);
      memory.creation_tags.push_back(static_cast<std::uint32_t>(input_id));
    }

    outcome.trace_layers.push_back(layer.layer_id);
    outcome.traces.push_back(std::move(matured.trace));
  }

  outcome.prediction = majority_vote(pooled_plasma, class_count);
  return outcome;
}

}  // namespace rails
