#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "rails/config.hpp"
#include "rails/errors.hpp"
#include "rails/experiment.hpp"

namespace {

int dispatch(const std::string& verb, const rails::ExperimentConfig& cfg) {
  if (verb == "index") {
    rails::run_index(cfg);
    std::cout << "wrote index artifacts to " << cfg.out_dir << "\n";
  } else if (verb == "attack") {
    const auto manifest = rails::run_attack(cfg);
    std::cout << "wrote " << manifest.kind << " set (epsilon "
              << manifest.epsilon << ") to " << cfg.attack_file << "\n";
  } else if (verb == "evaluate") {
    const auto outcome = rails::run_evaluate(cfg);
    for (const auto& m : outcome.methods) {
      std::cout << m.name << ": SA " << m.standard_accuracy << " RA "
                << m.robust_accuracy << "\n";
    }
  } else if (verb == "harden") {
    const auto outcome = rails::run_harden(cfg);
    std::cout << "memory entries: " << outcome.memory_entries << "\n"
              << "knn-baseline RA " << outcome.knn_before.robust_accuracy
              << " -> " << outcome.knn_after.robust_accuracy << "\n"
              << "rails RA " << outcome.rails_before.robust_accuracy << " -> "
              << outcome.rails_after.robust_accuracy << "\n";
  } else if (verb == "sense") {
    const auto outcome = rails::run_sense(cfg);
    std::cout << "threat-score ROC AUC: " << outcome.auc << "\n";
  } else if (verb == "curves") {
    rails::run_curves(cfg);
    std::cout << "wrote generation traces to " << cfg.out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RAILS adversarial-defense experiment harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seed;
  std::string sensing_threshold;

  for (const char* verb :
       {"index", "attack", "evaluate", "harden", "sense", "curves"}) {
    auto* sub = app.add_subcommand(verb);
    sub->add_option("--config", config_path, "experiment config file")
        ->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--sensing-threshold", sensing_threshold,
                    "enable sensing with this threshold");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    rails::KvConfig kv = rails::KvConfig::from_file(config_path);
    if (!seed.empty()) kv.set("seed", seed);
    if (!out_dir.empty()) kv.set("out.dir", out_dir);
    if (!sensing_threshold.empty()) {
      kv.set("sensing.enabled", "1");
      kv.set("sensing.threshold", sensing_threshold);
    }
    const auto cfg = rails::ExperimentConfig::from_kv(kv);
    return dispatch(verb, cfg);
  } catch (const rails::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const rails::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
