#include "rails/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rails/data_io.hpp"
#include "rails/desk_dataset.hpp"
#include "rails/errors.hpp"
#include "rails/parallel.hpp"

namespace rails {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr char kIdxMagic[8] = {'R', 'A', 'I', 'L', 'S', 'I', 'D', 'X'};
constexpr std::uint32_t kIdxVersion = 1;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void append_le_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_le_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t read_le_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint16_t read_le_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path.string());
  return out;
}

// ---------------------------------------------------------------------
// Subset selection
// ---------------------------------------------------------------------

ExampleSet take_columns(const ExampleSet& set,
                        const std::vector<Eigen::Index>& ids) {
  ExampleSet out;
  out.class_count = set.class_count;
  out.features.resize(set.dim(), static_cast<Eigen::Index>(ids.size()));
  out.labels.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.features.col(static_cast<Eigen::Index>(i)) = set.features.col(ids[i]);
    out.labels[i] = set.labels[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

// Proportional (largest remainder) stratified sample without replacement,
// returned in ascending dataset order.
std::vector<Eigen::Index> stratified_sample(const ExampleSet& set, int count,
                                            std::uint64_t seed) {
  const auto parts = partition_by_class(set);
  const double total = static_cast<double>(set.size());
  std::vector<int> want(parts.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t c = 0; c < parts.size(); ++c) {
    const double exact =
        count * static_cast<double>(parts[c].size()) / total;
    want[c] = static_cast<int>(std::floor(exact));
    assigned += want[c];
    remainders.push_back({exact - want[c], c});
  }
  std::sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < count && i < static_cast<int>(remainders.size());
       ++i) {
    const std::size_t c = remainders[static_cast<std::size_t>(i)].second;
    if (want[c] < static_cast<int>(parts[c].size())) {
      ++want[c];
      ++assigned;
    }
  }
  if (assigned < count) {
    throw ValidationError("subset size " + std::to_string(count) +
                          " exceeds dataset size");
  }
  std::vector<Eigen::Index> chosen;
  chosen.reserve(static_cast<std::size_t>(count));
  for (std::size_t c = 0; c < parts.size(); ++c) {
    std::vector<Eigen::Index> pool = parts[c];
    Rng rng(derive_seed(seed, {0x73747261ULL, c}));
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.index(i)]);
    }
    if (static_cast<std::size_t>(want[c]) > pool.size()) {
      throw ValidationError("class " + std::to_string(c) +
                            " too small for stratified subset");
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + want[c]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<Eigen::Index> plain_sample(Eigen::Index size, int count,
                                       std::uint64_t seed) {
  if (count > size) {
    throw ValidationError("subset size " + std::to_string(count) +
                          " exceeds dataset size " + std::to_string(size));
  }
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(size));
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(derive_seed(seed, {0x74657374ULL}));
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::swap(pool[i - 1], pool[rng.index(i)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------

void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    const RunData& data,
                    const std::vector<std::string>& config_echo) {
  std::ofstream out = open_text(fs::path(cfg.out_dir) / "run_manifest.txt");
  out << "command=" << command << "\n"
      << "version=" << kVersion << "\n"
      << "seed=" << cfg.seed << "\n"
      << "train_hash=" << data.train_hash << "\n"
      << "test_hash=" << data.test_hash << "\n";
  for (const std::string& line : config_echo) out << "config." << line << "\n";
  if (!out) throw IoError("manifest write failed");
}

}  // namespace

// ---------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
  ExperimentConfig cfg;
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.threads = static_cast<unsigned>(kv.get_int("threads", 0));
  cfg.out_dir = kv.get_string("out.dir", cfg.out_dir);

  cfg.source = kv.get_string("data.source", cfg.source);
  cfg.class_count = static_cast<int>(kv.get_int("data.class_count", 10));
  cfg.train_subset = static_cast<int>(kv.get_int("data.train_subset", 10000));
  cfg.test_count = static_cast<int>(kv.get_int("data.test_count", 500));
  cfg.digits_train_pool =
      static_cast<int>(kv.get_int("data.digits_train_pool", 12000));
  cfg.digits_test_pool =
      static_cast<int>(kv.get_int("data.digits_test_pool", 2000));
  cfg.digits_seed = kv.get_u64("data.digits_seed", 7);
  cfg.train_images = kv.get_string("data.train_images", "");
  cfg.train_labels = kv.get_string("data.train_labels", "");
  cfg.test_images = kv.get_string("data.test_images", "");
  cfg.test_labels = kv.get_string("data.test_labels", "");
  if (cfg.source != "digits" && cfg.source != "idx") {
    throw ValidationError("config: data.source must be 'digits' or 'idx'");
  }

  cfg.rails.K = static_cast<int>(kv.get_int("rails.K", 10));
  cfg.rails.T = static_cast<int>(kv.get_int("rails.T", 100));
  cfg.rails.G = static_cast<int>(kv.get_int("rails.G", 10));
  cfg.rails.rho = kv.get_double("rails.rho", 0.15);
  cfg.rails.delta_min = kv.get_double("rails.delta_min", 0.05);
  cfg.rails.delta_max = kv.get_double("rails.delta_max", 0.15);
  cfg.rails.gamma_plasma = kv.get_double("rails.gamma_plasma", 0.05);
  cfg.rails.gamma_memory = kv.get_double("rails.gamma_memory", 0.25);
  cfg.rails.layers = kv.get_list("rails.layers", "input");
  cfg.rails.early_stop.enabled = kv.get_bool("rails.early_stop", false);
  cfg.rails.early_stop.dominance = kv.get_double("rails.dominance", 0.9);
  cfg.rails.early_stop.patience =
      static_cast<int>(kv.get_int("rails.patience", 3));
  cfg.rails.mutation_per_element =
      kv.get_bool("rails.mutation_per_element", false);
  cfg.rails.seed = cfg.seed;

  cfg.rails.tau.clear();
  for (const std::string& layer : cfg.rails.layers) {
    cfg.rails.tau[layer] =
        kv.get_double("layer." + layer + ".tau", layer == "input" ? 3.0 : 18.0);
    if (layer != "input") {
      LayerFiles files;
      files.train = kv.get_string("layer." + layer + ".train", "");
      files.test = kv.get_string("layer." + layer + ".test", "");
      files.attack = kv.get_string("layer." + layer + ".attack", "");
      if (files.train.empty() || files.test.empty()) {
        throw ValidationError("config: layer '" + layer +
                              "' needs train and test embedding files");
      }
      cfg.layer_files[layer] = files;
    }
  }
  // Consume any remaining layer.* keys so unknown layers are reported
  // against rails.layers instead of the unconsumed-key check.
  for (const std::string& key : kv.keys_with_prefix("layer.")) {
    const auto rest = key.substr(6);
    const auto dot = rest.find('.');
    const std::string layer = rest.substr(0, dot);
    if (std::find(cfg.rails.layers.begin(), cfg.rails.layers.end(), layer) ==
        cfg.rails.layers.end()) {
      throw ValidationError("config: key '" + key +
                            "' refers to a layer not in rails.layers");
    }
  }

  cfg.attack.kind =
      attack_kind_from_string(kv.get_string("attack.kind", "pgd"));
  cfg.attack.epsilon = kv.get_double("attack.epsilon", 40.0);
  cfg.attack.steps = static_cast<int>(kv.get_int("attack.steps", 20));
  cfg.attack.step_size = kv.get_double("attack.step_size", 0.0);
  cfg.attack.random_start = kv.get_bool("attack.random_start", true);
  cfg.attack.seed = derive_seed(cfg.seed, {0x61747461636bULL});
  cfg.attack_file = kv.get_string("attack.file", "adv.remb");
  cfg.attack_knn_k = static_cast<int>(kv.get_int("attack.knn_k", 10));

  cfg.surrogate.hidden = static_cast<int>(kv.get_int("surrogate.hidden", 256));
  cfg.surrogate.epochs = static_cast<int>(kv.get_int("surrogate.epochs", 12));
  cfg.surrogate.learning_rate = kv.get_double("surrogate.lr", 0.1);
  cfg.surrogate.batch_size = static_cast<int>(kv.get_int("surrogate.batch", 128));
  cfg.surrogate.seed = derive_seed(cfg.seed, {0x737572ULL});
  cfg.surrogate_min_accuracy = kv.get_double("surrogate.min_accuracy", 0.9);

  cfg.sensing.enabled = kv.get_bool("sensing.enabled", false);
  cfg.sensing.threshold = kv.get_double("sensing.threshold", 0.4);
  cfg.sensing.k = static_cast<int>(kv.get_int("sensing.k", 0));
  cfg.sensing.alpha = kv.get_double("sensing.alpha", 1.0);
  cfg.sensing.layers = kv.get_list("sensing.layers", "");

  cfg.harden.count = static_cast<int>(kv.get_int("harden.count", 300));
  cfg.harden.eval_count =
      static_cast<int>(kv.get_int("harden.eval_count", 300));
  cfg.harden.memory_cap =
      static_cast<int>(kv.get_int("harden.memory_cap", 3000));

  cfg.memory_path = kv.get_string("memory.path", "");
  cfg.index_dir = kv.get_string("index.dir", "");

  cfg.curve_inputs.clear();
  for (const std::string& item : kv.get_list("curves.inputs", "0,1,2,3,4")) {
    cfg.curve_inputs.push_back(std::stoi(item));
  }
  cfg.curves_use_attack = kv.get_bool("curves.use_attack", false);

  const auto leftover = kv.unconsumed();
  if (!leftover.empty()) {
    std::string joined;
    for (const std::string& k : leftover) joined += " " + k;
    throw ValidationError("config: unknown keys:" + joined);
  }
  cfg.config_echo = kv.echo();
  cfg.rails.validate();
  cfg.attack.validate();
  return cfg;
}

// ---------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------

RunData prepare_data(const ExperimentConfig& cfg) {
  ExampleSet train_full;
  ExampleSet test_full;
  if (cfg.source == "digits") {
    DeskDatasetOptions opts;
    opts.train_count = cfg.digits_train_pool;
    opts.test_count = cfg.digits_test_pool;
    opts.seed = cfg.digits_seed;
    DeskDataset desk = build_desk_dataset(opts);
    train_full = std::move(desk.train);
    test_full = std::move(desk.test);
  } else {
    train_full = load_idx_pair(cfg.train_images, cfg.train_labels,
                               cfg.class_count);
    test_full = load_idx_pair(cfg.test_images, cfg.test_labels,
                              cfg.class_count);
  }
  RunData data;
  if (cfg.train_subset > 0 &&
      cfg.train_subset < static_cast<int>(train_full.size())) {
    data.train = take_columns(
        train_full, stratified_sample(train_full, cfg.train_subset, cfg.seed));
  } else {
    data.train = std::move(train_full);
  }
  if (cfg.test_count > 0 &&
      cfg.test_count < static_cast<int>(test_full.size())) {
    data.test_source_ids = plain_sample(test_full.size(), cfg.test_count,
                                        cfg.seed);
    data.test = take_columns(test_full, data.test_source_ids);
  } else {
    data.test = std::move(test_full);
    data.test_source_ids.resize(static_cast<std::size_t>(data.test.size()));
    std::iota(data.test_source_ids.begin(), data.test_source_ids.end(), 0);
  }
  data.train_hash = dataset_hash(data.train);
  data.test_hash = dataset_hash(data.test);
  return data;
}

// ---------------------------------------------------------------------
// Index artifacts
// ---------------------------------------------------------------------

void save_index_artifact(const std::string& path, const std::string& layer_id,
                         std::uint32_t train_hash, const Eigen::MatrixXf& rows,
                         const std::vector<std::uint16_t>& labels) {
  if (static_cast<std::size_t>(rows.cols()) != labels.size()) {
    throw ValidationError("index artifact: label count mismatch");
  }
  std::string buf;
  buf.append(kIdxMagic, sizeof(kIdxMagic));
  append_le_u32(buf, kIdxVersion);
  append_le_u16(buf, static_cast<std::uint16_t>(layer_id.size()));
  buf.append(layer_id);
  append_le_u32(buf, train_hash);
  append_le_u32(buf, static_cast<std::uint32_t>(rows.cols()));
  append_le_u32(buf, static_cast<std::uint32_t>(rows.rows()));
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      std::uint32_t bits;
      const float v = rows(r, c);
      std::memcpy(&bits, &v, 4);
      append_le_u32(buf, bits);
    }
  }
  for (std::uint16_t l : labels) append_le_u16(buf, l);
  append_le_u32(buf, crc32_bytes(buf.data(), buf.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write index artifact: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("index artifact write failed: " + path);
}

IndexArtifact load_index_artifact(const std::string& path,
                                  std::optional<std::uint32_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open index artifact: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 4 + sizeof(kIdxMagic)) {
    throw IoError("truncated index artifact: " + path);
  }
  const std::size_t body = buf.size() - 4;
  const auto* base = reinterpret_cast<const unsigned char*>(buf.data());
  if (crc32_bytes(buf.data(), body) != read_le_u32(base + body)) {
    throw FormatError("index artifact checksum mismatch: " + path);
  }
  if (std::memcmp(buf.data(), kIdxMagic, sizeof(kIdxMagic)) != 0) {
    throw FormatError("bad index artifact magic: " + path);
  }
  std::size_t at = sizeof(kIdxMagic);
  auto need = [&](std::size_t n) {
    if (body - at < n) throw IoError("truncated index artifact: " + path);
  };
  need(4);
  const std::uint32_t version = read_le_u32(base + at);
  at += 4;
  if (version != kIdxVersion) {
    throw FormatError("unsupported index artifact version: " + path);
  }
  need(2);
  const std::uint16_t name_len = read_le_u16(base + at);
  at += 2;
  need(name_len);
  IndexArtifact artifact;
  artifact.layer_id.assign(buf, at, name_len);
  at += name_len;
  need(12);
  artifact.train_hash = read_le_u32(base + at);
  const std::uint32_t count = read_le_u32(base + at + 4);
  const std::uint32_t dim = read_le_u32(base + at + 8);
  at += 12;
  if (expected_hash.has_value() && artifact.train_hash != *expected_hash) {
    throw ValidationError(
        "index artifact is stale: dataset hash " +
        std::to_string(artifact.train_hash) + " does not match " +
        std::to_string(*expected_hash));
  }
  need(std::size_t(count) * dim * 4 + std::size_t(count) * 2);
  artifact.rows.resize(dim, count);
  for (std::uint32_t c = 0; c < count; ++c) {
    for (std::uint32_t r = 0; r < dim; ++r) {
      const std::uint32_t bits = read_le_u32(base + at);
      at += 4;
      float v;
      std::memcpy(&v, &bits, 4);
      artifact.rows(r, c) = v;
    }
  }
  artifact.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    artifact.labels[i] = read_le_u16(base + at);
    at += 2;
  }
  if (at != body) throw FormatError("trailing bytes in index artifact: " + path);
  return artifact;
}

// ---------------------------------------------------------------------
// Layer contexts
// ---------------------------------------------------------------------

std::vector<LayerContext> build_layers(const ExperimentConfig& cfg,
                                       const RunData& data,
                                       const MemoryStore* memory,
                                       const Eigen::MatrixXf* attack_rows) {
  std::vector<LayerContext> layers;
  for (const std::string& layer : cfg.rails.layers) {
    LayerContext ctx;
    ctx.layer_id = layer;
    ExampleSet index_source;
    const EmbeddingTable* embeddings = nullptr;
    EmbeddingTable train_emb;

    if (!cfg.index_dir.empty()) {
      const auto path = fs::path(cfg.index_dir) / ("index_" + layer + ".ridx");
      IndexArtifact artifact =
          load_index_artifact(path.string(), data.train_hash);
      index_source.features = artifact.rows.cast<double>();
      index_source.labels = std::move(artifact.labels);
      index_source.class_count = cfg.class_count;
      ctx.index = std::make_unique<ClassIndex>(index_source, layer, nullptr,
                                               memory);
    } else if (layer == "input") {
      ctx.index =
          std::make_unique<ClassIndex>(data.train, layer, nullptr, memory);
    } else {
      train_emb = load_embeddings(cfg.layer_files.at(layer).train);
      train_emb.layer_id = layer;
      embeddings = &train_emb;
      ctx.index = std::make_unique<ClassIndex>(data.train, layer, embeddings,
                                               memory);
    }

    if (layer == "input") {
      ctx.test_features = data.test.features;
      if (attack_rows != nullptr) {
        ctx.attack_features = attack_rows->cast<double>();
      }
    } else {
      const LayerFiles& files = cfg.layer_files.at(layer);
      EmbeddingTable test_emb = load_embeddings(files.test);
      if (test_emb.size() != data.test.size()) {
        throw ValidationError("layer '" + layer +
                              "': test embeddings not aligned with subset");
      }
      ctx.test_features = test_emb.rows.cast<double>();
      if (attack_rows != nullptr) {
        if (files.attack.empty()) {
          throw ValidationError("layer '" + layer +
                                "': attack embeddings required for robust "
                                "evaluation");
        }
        EmbeddingTable attack_emb = load_embeddings(files.attack);
        if (attack_emb.size() != attack_rows->cols()) {
          throw ValidationError("layer '" + layer +
                                "': attack embeddings not aligned");
        }
        ctx.attack_features = attack_emb.rows.cast<double>();
      }
    }
    layers.push_back(std::move(ctx));
  }
  return layers;
}

// ---------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------

Prediction knn_baseline_predict(const std::vector<LayerContext>& layers,
                                Eigen::Index input, bool use_attack,
                                const RailsConfig& rails) {
  const int C = layers.front().index->class_count();
  Prediction pred;
  pred.votes.assign(static_cast<std::size_t>(C), 0);
  std::vector<double> weight(static_cast<std::size_t>(C), 0.0);
  int total = 0;
  for (const LayerContext& ctx : layers) {
    const Matrix& feats = use_attack ? ctx.attack_features : ctx.test_features;
    const auto neighbors =
        ctx.index->query_global_knn(feats.col(input), rails.K);
    const double tau = rails.tau_for(ctx.layer_id);
    for (const Neighbor& n : neighbors) {
      ++pred.votes[static_cast<std::size_t>(n.class_id)];
      weight[static_cast<std::size_t>(n.class_id)] +=
          std::exp(n.affinity / tau);
      ++total;
    }
  }
  int best = 0;
  for (int c = 1; c < C; ++c) {
    if (pred.votes[c] > pred.votes[best] ||
        (pred.votes[c] == pred.votes[best] && weight[c] > weight[best])) {
      best = c;
    }
  }
  pred.predicted_class = best;
  pred.confidence = total > 0 ? static_cast<double>(pred.votes[best]) / total
                              : 0.0;
  return pred;
}

// ---------------------------------------------------------------------
// Evaluation core
// ---------------------------------------------------------------------

namespace {

struct PredictionRow {
  Eigen::Index input_id = 0;
  int true_label = 0;
  int predicted = 0;
  double confidence = 0.0;
  std::vector<double> votes;
};

struct MethodPredictions {
  std::string name;
  std::vector<PredictionRow> benign;
  std::vector<PredictionRow> adversarial;

  double accuracy(bool adv) const {
    const auto& rows = adv ? adversarial : benign;
    std::size_t correct = 0;
    for (const PredictionRow& r : rows) {
      correct += r.predicted == r.true_label ? 1 : 0;
    }
    return rows.empty() ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(rows.size());
  }
};

Eigen::Matrix2d confusion_intersection(const std::vector<PredictionRow>& a,
                                       const std::vector<PredictionRow>& b) {
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int row = a[i].predicted == a[i].true_label ? 0 : 1;
    const int col = b[i].predicted == b[i].true_label ? 0 : 1;
    m(row, col) += 1.0;
  }
  if (!a.empty()) m /= static_cast<double>(a.size());
  return m;
}

void write_prediction_csv(const fs::path& path,
                          const std::vector<PredictionRow>& rows,
                          int class_count) {
  std::ofstream out = open_text(path);
  out << "input_id,true_label,predicted_label,confidence";
  for (int c = 0; c < class_count; ++c) out << ",votes_" << c;
  out << "\n";
  for (const PredictionRow& r : rows) {
    out << r.input_id << "," << r.true_label << "," << r.predicted << ","
        << fmt(r.confidence);
    for (double v : r.votes) out << "," << fmt(v);
    out << "\n";
  }
}

void write_confusion_csv(const fs::path& path, const Eigen::Matrix2d& m) {
  std::ofstream out = open_text(path);
  out << ",baseline_correct,baseline_wrong\n";
  out << "rails_correct," << fmt(m(0, 0)) << "," << fmt(m(0, 1)) << "\n";
  out << "rails_wrong," << fmt(m(1, 0)) << "," << fmt(m(1, 1)) << "\n";
}

struct EvalContext {
  const ExperimentConfig& cfg;
  const RunData& data;
  const std::vector<LayerContext>& layers;
  const SurrogateModel& surrogate;
};

std::vector<double> to_votes(const std::vector<int>& counts) {
  return std::vector<double>(counts.begin(), counts.end());
}

// Predicts one input with every method. RAILS goes through the sensing
// gate when enabled: benign-scored inputs keep the reference prediction.
void predict_one(const EvalContext& ec, Eigen::Index i, bool adv,
                 PredictionRow& rails_row, PredictionRow& knn_row,
                 PredictionRow& surrogate_row) {
  const ExperimentConfig& cfg = ec.cfg;
  const Eigen::Index input_id = ec.data.test_source_ids[
      static_cast<std::size_t>(i)];
  const int true_label = ec.data.test.labels[static_cast<std::size_t>(i)];
  const int C = cfg.class_count;

  auto pixel_view = [&](bool use_attack) -> Vector {
    for (const LayerContext& ctx : ec.layers) {
      if (ctx.layer_id == "input") {
        return use_attack ? ctx.attack_features.col(i)
                          : ctx.test_features.col(i);
      }
    }
    // No input layer configured: the surrogate and sensing reference still
    // run on pixels, which equal the benign test set only.
    return ec.data.test.features.col(i);
  };

  const Vector pixels = pixel_view(adv);
  const Vector scores = ec.surrogate.scores(pixels);
  Eigen::Index surrogate_arg = 0;
  scores.maxCoeff(&surrogate_arg);

  surrogate_row = {input_id, true_label, static_cast<int>(surrogate_arg),
                   scores[surrogate_arg],
                   std::vector<double>(scores.data(), scores.data() + C)};

  const Prediction knn = knn_baseline_predict(ec.layers, i, adv, cfg.rails);
  knn_row = {input_id, true_label, knn.predicted_class, knn.confidence,
             to_votes(knn.votes)};

  bool run_rails = true;
  if (cfg.sensing.enabled) {
    const int k = cfg.sensing.k > 0 ? cfg.sensing.k : cfg.rails.K;
    std::vector<Vector> histograms;
    for (const LayerContext& ctx : ec.layers) {
      if (!cfg.sensing.layers.empty() &&
          std::find(cfg.sensing.layers.begin(), cfg.sensing.layers.end(),
                    ctx.layer_id) == cfg.sensing.layers.end()) {
        continue;
      }
      const Matrix& feats = adv ? ctx.attack_features : ctx.test_features;
      histograms.push_back(
          knn_class_histogram(*ctx.index, feats.col(i), k, cfg.sensing.alpha));
    }
    const SenseResult gate = sense(scores, histograms, cfg.sensing.threshold);
    if (!gate.suspicious) {
      rails_row = {input_id, true_label, gate.reference_prediction,
                   scores[gate.reference_prediction],
                   std::vector<double>(static_cast<std::size_t>(C), 0.0)};
      run_rails = false;
    }
  }
  if (run_rails) {
    std::vector<LayerInput> inputs;
    inputs.reserve(ec.layers.size());
    for (const LayerContext& ctx : ec.layers) {
      const Matrix& feats = adv ? ctx.attack_features : ctx.test_features;
      inputs.push_back({ctx.layer_id, ctx.index.get(), feats.col(i)});
    }
    const RailsOutcome outcome = rails_predict(
        inputs, cfg.rails, static_cast<std::uint64_t>(input_id));
    rails_row = {input_id, true_label, outcome.prediction.predicted_class,
                 outcome.prediction.confidence,
                 to_votes(outcome.prediction.votes)};
  }
}

std::vector<MethodPredictions> evaluate_methods(const EvalContext& ec,
                                                bool with_adversarial) {
  const auto n = static_cast<std::size_t>(ec.data.test.size());
  std::vector<MethodPredictions> methods(3);
  methods[0].name = "rails";
  methods[1].name = "knn-baseline";
  methods[2].name = "surrogate";
  for (MethodPredictions& m : methods) {
    m.benign.resize(n);
    if (with_adversarial) m.adversarial.resize(n);
  }
  parallel_for(n, ec.cfg.threads, [&](std::size_t i) {
    const auto idx = static_cast<Eigen::Index>(i);
    predict_one(ec, idx, false, methods[0].benign[i], methods[1].benign[i],
                methods[2].benign[i]);
    if (with_adversarial) {
      predict_one(ec, idx, true, methods[0].adversarial[i],
                  methods[1].adversarial[i], methods[2].adversarial[i]);
    }
  });
  return methods;
}

SurrogateModel train_run_surrogate(const ExperimentConfig& cfg,
                                   const RunData& data) {
  return train_surrogate(data.train.features, data.train.labels,
                         cfg.class_count, cfg.surrogate);
}

Eigen::MatrixXf load_or_check_attack(const ExperimentConfig& cfg,
                                     const RunData& data) {
  auto [rows, manifest] = load_attack_set(cfg.attack_file);
  if (manifest.source_dataset_hash != data.test_hash) {
    throw ValidationError(
        "attack file was generated from a different test subset (hash " +
        std::to_string(manifest.source_dataset_hash) + " vs " +
        std::to_string(data.test_hash) + ")");
  }
  if (rows.cols() != data.test.size() || rows.rows() != data.test.dim()) {
    throw ValidationError("attack file shape does not match the test subset");
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------

void run_index(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  for (const std::string& layer : cfg.rails.layers) {
    Eigen::MatrixXf rows;
    if (layer == "input") {
      rows = data.train.features.cast<float>();
    } else {
      EmbeddingTable emb = load_embeddings(cfg.layer_files.at(layer).train);
      if (emb.size() != data.train.size()) {
        throw ValidationError("layer '" + layer +
                              "': train embeddings not aligned with subset");
      }
      rows = emb.rows;
    }
    const auto path = fs::path(cfg.out_dir) / ("index_" + layer + ".ridx");
    save_index_artifact(path.string(), layer, data.train_hash, rows,
                        data.train.labels);
  }
  write_manifest(cfg, "index", data, cfg.config_echo);
}

AttackManifest run_attack(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  const SurrogateModel surrogate = train_run_surrogate(cfg, data);
  const double clean_acc = surrogate.accuracy(data.test.features,
                                              data.test.labels);
  if (clean_acc < cfg.surrogate_min_accuracy) {
    throw ValidationError("surrogate clean accuracy " + fmt(clean_acc) +
                          " below sanity gate " +
                          fmt(cfg.surrogate_min_accuracy));
  }
  std::unique_ptr<ClassIndex> index;
  if (cfg.attack.kind == AttackKind::kKnnFeature) {
    index = std::make_unique<ClassIndex>(data.train, "input");
  }
  const Eigen::MatrixXf rows = generate_attack_set(
      cfg.attack, surrogate, index.get(), data.test.features,
      data.test.labels, cfg.attack_knn_k, cfg.threads);
  AttackManifest manifest;
  manifest.kind = to_string(cfg.attack.kind);
  manifest.epsilon = cfg.attack.epsilon;
  manifest.steps = cfg.attack.steps;
  manifest.seed = cfg.attack.seed;
  manifest.source_dataset_hash = data.test_hash;
  save_attack_set(cfg.attack_file, rows, manifest);
  write_manifest(cfg, "attack", data, cfg.config_echo);
  return manifest;
}

EvalOutcome run_evaluate(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  const Eigen::MatrixXf attack_rows = load_or_check_attack(cfg, data);

  MemoryStore memory;
  const MemoryStore* memory_ptr = nullptr;
  if (!cfg.memory_path.empty()) {
    memory = load_memory_store(cfg.memory_path);
    memory_ptr = &memory;
  }
  const auto layers = build_layers(cfg, data, memory_ptr, &attack_rows);
  const SurrogateModel surrogate = train_run_surrogate(cfg, data);
  const EvalContext ec{cfg, data, layers, surrogate};
  const auto methods = evaluate_methods(ec, true);

  EvalOutcome outcome;
  std::ofstream summary =
      open_text(fs::path(cfg.out_dir) / "eval_summary.csv");
  summary << "method,sa,ra,benign_count,adversarial_count\n";
  for (const MethodPredictions& m : methods) {
    const MethodResult result{m.name, m.accuracy(false), m.accuracy(true)};
    outcome.methods.push_back(result);
    summary << m.name << "," << fmt(result.standard_accuracy) << ","
            << fmt(result.robust_accuracy) << "," << m.benign.size() << ","
            << m.adversarial.size() << "\n";
    write_prediction_csv(fs::path(cfg.out_dir) /
                             ("predictions_" + m.name + "_benign.csv"),
                         m.benign, cfg.class_count);
    write_prediction_csv(fs::path(cfg.out_dir) /
                             ("predictions_" + m.name + "_adv.csv"),
                         m.adversarial, cfg.class_count);
  }
  for (std::size_t b = 1; b < methods.size(); ++b) {
    const std::string& name = methods[b].name;
    outcome.confusion[name]["benign"] =
        confusion_intersection(methods[0].benign, methods[b].benign);
    outcome.confusion[name]["adv"] =
        confusion_intersection(methods[0].adversarial, methods[b].adversarial);
    write_confusion_csv(
        fs::path(cfg.out_dir) / ("confusion_" + name + "_benign.csv"),
        outcome.confusion[name]["benign"]);
    write_confusion_csv(
        fs::path(cfg.out_dir) / ("confusion_" + name + "_adv.csv"),
        outcome.confusion[name]["adv"]);
  }
  write_manifest(cfg, "evaluate", data, cfg.config_echo);
  return outcome;
}

HardenOutcome run_harden(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  const int needed = cfg.harden.count + cfg.harden.eval_count;
  if (needed > data.test.size()) {
    throw ValidationError(
        "harden: hardening and evaluation batches need " +
        std::to_string(needed) + " test inputs, subset has " +
        std::to_string(data.test.size()) +
        " (batches must be disjoint)");
  }
  // Disjoint batches from a seeded shuffle of the test subset.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.test.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, {0x686172ULL}));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.index(i)]);
  }
  std::vector<Eigen::Index> harden_ids(
      order.begin(), order.begin() + cfg.harden.count);
  std::vector<Eigen::Index> eval_ids(
      order.begin() + cfg.harden.count, order.begin() + needed);

  auto batch_data = [&](const std::vector<Eigen::Index>& ids) {
    RunData out;
    out.train = data.train;
    out.test = take_columns(data.test, ids);
    out.test_source_ids.reserve(ids.size());
    for (Eigen::Index i : ids) {
      out.test_source_ids.push_back(
          data.test_source_ids[static_cast<std::size_t>(i)]);
    }
    out.train_hash = data.train_hash;
    out.test_hash = dataset_hash(out.test);
    return out;
  };
  RunData harden_data = batch_data(harden_ids);
  RunData eval_data = batch_data(eval_ids);

  const SurrogateModel surrogate = train_run_surrogate(cfg, data);
  std::unique_ptr<ClassIndex> attack_index;
  if (cfg.attack.kind == AttackKind::kKnnFeature) {
    attack_index = std::make_unique<ClassIndex>(data.train, "input");
  }
  const Eigen::MatrixXf harden_adv = generate_attack_set(
      cfg.attack, surrogate, attack_index.get(), harden_data.test.features,
      harden_data.test.labels, cfg.attack_knn_k, cfg.threads);
  const Eigen::MatrixXf eval_adv = generate_attack_set(
      cfg.attack, surrogate, attack_index.get(), eval_data.test.features,
      eval_data.test.labels, cfg.attack_knn_k, cfg.threads);

  auto evaluate_phase = [&](const MemoryStore* memory) {
    const auto layers = build_layers(cfg, eval_data, memory, &eval_adv);
    const EvalContext ec{cfg, eval_data, layers, surrogate};
    return evaluate_methods(ec, true);
  };

  HardenOutcome outcome;
  {
    const auto before = evaluate_phase(nullptr);
    outcome.rails_before = {"rails", before[0].accuracy(false),
                            before[0].accuracy(true)};
    outcome.knn_before = {"knn-baseline", before[1].accuracy(false),
                          before[1].accuracy(true)};
  }

  // Harvest memory from RAILS runs over the attacked hardening batch.
  MemoryStore harvested;
  {
    const auto layers = build_layers(cfg, harden_data, nullptr, &harden_adv);
    const auto n = static_cast<std::size_t>(harden_data.test.size());
    std::vector<MemoryStore> per_input(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      const auto idx = static_cast<Eigen::Index>(i);
      std::vector<LayerInput> inputs;
      for (const LayerContext& ctx : layers) {
        inputs.push_back({ctx.layer_id, ctx.index.get(),
                          ctx.attack_features.col(idx)});
      }
      const auto outcome_i = rails_predict(
          inputs, cfg.rails,
          static_cast<std::uint64_t>(
              harden_data.test_source_ids[i]));
      per_input[i] = outcome_i.memory;
    });
    // Merge in input order, truncating at the configured cap.
    auto full = [&] {
      return cfg.harden.memory_cap > 0 &&
             harvested.size() >= static_cast<Eigen::Index>(cfg.harden.memory_cap);
    };
    for (const MemoryStore& one : per_input) {
      if (full()) break;
      for (Eigen::Index e = 0; e < one.size(); ++e) {
        if (full()) break;
        const std::string& layer = one.layer_of(e);
        auto slot = std::find(harvested.layer_names.begin(),
                              harvested.layer_names.end(), layer);
        if (slot == harvested.layer_names.end()) {
          harvested.layer_names.push_back(layer);
          slot = std::prev(harvested.layer_names.end());
        }
        const Eigen::Index col = harvested.features.cols();
        if (harvested.features.rows() == 0) {
          harvested.features.resize(one.features.rows(), 0);
        }
        harvested.features.conservativeResize(harvested.features.rows(),
                                              col + 1);
        harvested.features.col(col) = one.features.col(e);
        harvested.labels.push_back(one.labels[static_cast<std::size_t>(e)]);
        harvested.layer_index.push_back(static_cast<std::uint16_t>(
            slot - harvested.layer_names.begin()));
        harvested.creation_tags.push_back(
            one.creation_tags[static_cast<std::size_t>(e)]);
      }
    }
  }
  outcome.memory_entries = harvested.size();
  const auto memory_path = fs::path(cfg.out_dir) / "memory.rmem";
  save_memory_store(memory_path.string(), harvested);

  {
    const auto after = evaluate_phase(&harvested);
    outcome.rails_after = {"rails", after[0].accuracy(false),
                           after[0].accuracy(true)};
    outcome.knn_after = {"knn-baseline", after[1].accuracy(false),
                         after[1].accuracy(true)};
  }

  std::ofstream report = open_text(fs::path(cfg.out_dir) / "harden_report.csv");
  report << "method,sa_before,ra_before,sa_after,ra_after,delta_sa,delta_ra\n";
  auto row = [&](const MethodResult& before, const MethodResult& after) {
    report << before.name << "," << fmt(before.standard_accuracy) << ","
           << fmt(before.robust_accuracy) << ","
           << fmt(after.standard_accuracy) << ","
           << fmt(after.robust_accuracy) << ","
           << fmt(after.standard_accuracy - before.standard_accuracy) << ","
           << fmt(after.robust_accuracy - before.robust_accuracy) << "\n";
  };
  row(outcome.knn_before, outcome.knn_after);
  row(outcome.rails_before, outcome.rails_after);
  write_manifest(cfg, "harden", data, cfg.config_echo);
  return outcome;
}

SenseOutcome run_sense(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  Eigen::MatrixXf attack_rows;
  if (fs::exists(cfg.attack_file)) {
    attack_rows = load_or_check_attack(cfg, data);
  } else {
    const SurrogateModel surrogate = train_run_surrogate(cfg, data);
    std::unique_ptr<ClassIndex> index;
    if (cfg.attack.kind == AttackKind::kKnnFeature) {
      index = std::make_unique<ClassIndex>(data.train, "input");
    }
    attack_rows = generate_attack_set(cfg.attack, surrogate, index.get(),
                                      data.test.features, data.test.labels,
                                      cfg.attack_knn_k, cfg.threads);
  }
  const auto layers = build_layers(cfg, data, nullptr, &attack_rows);
  const SurrogateModel surrogate = train_run_surrogate(cfg, data);
  const int k = cfg.sensing.k > 0 ? cfg.sensing.k : cfg.rails.K;

  const auto n = static_cast<std::size_t>(data.test.size());
  SenseOutcome outcome;
  outcome.benign_scores.resize(n);
  outcome.adversarial_scores.resize(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    const auto idx = static_cast<Eigen::Index>(i);
    for (const bool adv : {false, true}) {
      const Vector pixels = adv
          ? attack_rows.col(idx).cast<double>().eval()
          : data.test.features.col(idx).eval();
      const Vector scores = surrogate.scores(pixels);
      std::vector<Vector> histograms;
      for (const LayerContext& ctx : layers) {
        if (!cfg.sensing.layers.empty() &&
            std::find(cfg.sensing.layers.begin(), cfg.sensing.layers.end(),
                      ctx.layer_id) == cfg.sensing.layers.end()) {
          continue;
        }
        const Matrix& feats = adv ? ctx.attack_features : ctx.test_features;
        histograms.push_back(knn_class_histogram(*ctx.index, feats.col(idx),
                                                 k, cfg.sensing.alpha));
      }
      const double score = threat_score(scores, histograms);
      (adv ? outcome.adversarial_scores : outcome.benign_scores)[i] = score;
    }
  });

  const RocCurve roc = roc_curve(outcome.benign_scores,
                                 outcome.adversarial_scores);
  outcome.auc = roc.auc;

  std::ofstream scores = open_text(fs::path(cfg.out_dir) / "threat_scores.csv");
  scores << "input_id,set,score\n";
  for (std::size_t i = 0; i < n; ++i) {
    scores << data.test_source_ids[i] << ",benign,"
           << fmt(outcome.benign_scores[i]) << "\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    scores << data.test_source_ids[i] << ",adversarial,"
           << fmt(outcome.adversarial_scores[i]) << "\n";
  }
  std::ofstream roc_out = open_text(fs::path(cfg.out_dir) / "roc.csv");
  roc_out << "threshold,fpr,tpr\n";
  for (const RocPoint& p : roc.points) {
    roc_out << fmt(p.threshold) << "," << fmt(p.fpr) << "," << fmt(p.tpr)
            << "\n";
  }
  roc_out << "auc," << fmt(roc.auc) << ",\n";
  write_manifest(cfg, "sense", data, cfg.config_echo);
  return outcome;
}

void run_curves(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const RunData data = prepare_data(cfg);
  Eigen::MatrixXf attack_rows;
  const Eigen::MatrixXf* attack_ptr = nullptr;
  if (cfg.curves_use_attack) {
    attack_rows = load_or_check_attack(cfg, data);
    attack_ptr = &attack_rows;
  }
  const auto layers = build_layers(cfg, data, nullptr, attack_ptr);
  for (const int position : cfg.curve_inputs) {
    if (position < 0 || position >= data.test.size()) {
      throw ValidationError("curves: input position " +
                            std::to_string(position) +
                            " outside the test subset");
    }
    const auto idx = static_cast<Eigen::Index>(position);
    std::vector<LayerInput> inputs;
    for (const LayerContext& ctx : layers) {
      const Matrix& feats =
          cfg.curves_use_attack ? ctx.attack_features : ctx.test_features;
      inputs.push_back({ctx.layer_id, ctx.index.get(), feats.col(idx)});
    }
    const auto input_id = data.test_source_ids[static_cast<std::size_t>(
        position)];
    const RailsOutcome outcome =
        rails_predict(inputs, cfg.rails, static_cast<std::uint64_t>(input_id));
    for (std::size_t l = 0; l < outcome.traces.size(); ++l) {
      const auto path = fs::path(cfg.out_dir) /
                        ("trace_" + std::to_string(input_id) + "_" +
                         outcome.trace_layers[l] + ".csv");
      std::ofstream out = open_text(path);
      out << "generation,class,share_of_top_slice,mean_exp_affinity\n";
      for (const GenerationStats& g : outcome.traces[l]) {
        for (Eigen::Index c = 0; c < g.class_share.size(); ++c) {
          out << g.generation << "," << c << "," << fmt(g.class_share[c])
              << "," << fmt(g.mean_exp_affinity[c]) << "\n";
        }
      }
    }
  }
  write_manifest(cfg, "curves", data, cfg.config_echo);
}

}  // namespace rails
