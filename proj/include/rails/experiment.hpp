#ifndef RAILS_EXPERIMENT_HPP
#define RAILS_EXPERIMENT_HPP

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rails/attacks.hpp"
#include "rails/class_index.hpp"
#include "rails/config.hpp"
#include "rails/consensus.hpp"
#include "rails/evolution.hpp"
#include "rails/sensing.hpp"
#include "rails/surrogate.hpp"
#include "rails/types.hpp"

namespace rails {

// Extra maturation layer fed by precomputed embedding files. The input
// layer (identity features) needs no files.
struct LayerFiles {
  std::string train;   // embeddings aligned with the train subset
  std::string test;    // embeddings aligned with the test subset
  std::string attack;  // embeddings of the adversarial set
};

struct SensingConfig {
  bool enabled = false;
  double threshold = 0.4;
  int k = 0;  // 0 picks rails.K
  double alpha = 1.0;
  std::vector<std::string> layers;  // empty picks rails.layers
};

struct HardenConfig {
  int count = 300;       // hardening batch size
  int eval_count = 300;  // disjoint evaluation batch size
  int memory_cap = 3000; // 0 = keep everything harvested
};

// Everything a run needs, resolved from a KvConfig. All tunables live
// here; commands are pure functions of (config, out_dir).
struct ExperimentConfig {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out_dir = "out";

  // data
  std::string source = "digits";  // digits | idx
  int class_count = 10;
  int train_subset = 10000;  // 0 = all
  int test_count = 500;      // 0 = all
  int digits_train_pool = 12000;
  int digits_test_pool = 2000;
  std::uint64_t digits_seed = 7;
  std::string train_images, train_labels, test_images, test_labels;

  RailsConfig rails;
  std::map<std::string, LayerFiles> layer_files;

  AttackSpec attack;
  std::string attack_file = "adv.remb";
  int attack_knn_k = 10;

  SurrogateTrainOptions surrogate;
  double surrogate_min_accuracy = 0.9;

  SensingConfig sensing;
  HardenConfig harden;

  std::string memory_path;  // optional store merged into flocking indices
  std::string index_dir;    // optional persisted index artifacts

  std::vector<int> curve_inputs{0, 1, 2, 3, 4};
  bool curves_use_attack = false;

  // Sorted key=value echo of the source config, reproduced in manifests.
  std::vector<std::string> config_echo;

  static ExperimentConfig from_kv(const KvConfig& kv);
};

// The loaded, subsetted data a run works on.
struct RunData {
  ExampleSet train;
  ExampleSet test;
  std::vector<Eigen::Index> test_source_ids;  // original dataset positions
  std::uint32_t train_hash = 0;
  std::uint32_t test_hash = 0;
};

RunData prepare_data(const ExperimentConfig& cfg);

// Per-layer flocking indices plus the feature view of each input set.
struct LayerContext {
  std::string layer_id;
  std::unique_ptr<ClassIndex> index;
  Matrix test_features;    // column per test input
  Matrix attack_features;  // column per adversarial input (may be empty)
};

std::vector<LayerContext> build_layers(const ExperimentConfig& cfg,
                                       const RunData& data,
                                       const MemoryStore* memory,
                                       const Eigen::MatrixXf* attack_rows);

// Plain kNN majority vote over the configured layers (vote pooling), the
// desk-scale DkNN stand-in.
Prediction knn_baseline_predict(const std::vector<LayerContext>& layers,
                                Eigen::Index input, bool use_attack,
                                const RailsConfig& rails);

struct MethodResult {
  std::string name;
  double standard_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

struct EvalOutcome {
  std::vector<MethodResult> methods;
  // confusion[method][set] = 2x2 fractions, rows RAILS correct/wrong,
  // columns baseline correct/wrong.
  std::map<std::string, std::map<std::string, Eigen::Matrix2d>> confusion;
};

// Index artifacts: the train subset mapped into one layer, stamped with
// the dataset hash so stale artifacts are rejected at load time.
void save_index_artifact(const std::string& path, const std::string& layer_id,
                         std::uint32_t train_hash, const Eigen::MatrixXf& rows,
                         const std::vector<std::uint16_t>& labels);
struct IndexArtifact {
  std::string layer_id;
  std::uint32_t train_hash = 0;
  Eigen::MatrixXf rows;
  std::vector<std::uint16_t> labels;
};
IndexArtifact load_index_artifact(const std::string& path,
                                  std::optional<std::uint32_t> expected_hash);

// CLI verbs. Each writes its CSV outputs plus a run manifest under out_dir
// and returns the programmatic result.
void run_index(const ExperimentConfig& cfg);
AttackManifest run_attack(const ExperimentConfig& cfg);
EvalOutcome run_evaluate(const ExperimentConfig& cfg);
struct HardenOutcome {
  MethodResult knn_before, knn_after, rails_before, rails_after;
  Eigen::Index memory_entries = 0;
};
HardenOutcome run_harden(const ExperimentConfig& cfg);
struct SenseOutcome {
  std::vector<double> benign_scores;
  std::vector<double> adversarial_scores;
  double auc = 0.0;
};
SenseOutcome run_sense(const ExperimentConfig& cfg);
void run_curves(const ExperimentConfig& cfg);

}  // namespace rails

#endif  // RAILS_EXPERIMENT_HPP
