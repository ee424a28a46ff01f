#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "rails/data_io.hpp"
#include "rails/desk_dataset.hpp"
#include "rails/errors.hpp"

// Writes the bundled desk-scale digits dataset as IDX files, so configs
// with data.source=idx (and external tooling) can consume it.
int main(int argc, char** argv) {
  CLI::App app{"emit the desk-scale digits dataset as IDX files"};
  std::string out_dir = "data";
  rails::DeskDatasetOptions opts;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--train", opts.train_count, "training examples");
  app.add_option("--test", opts.test_count, "test examples");
  app.add_option("--seed", opts.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const rails::DeskDataset data = rails::build_desk_dataset(opts);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    rails::save_idx_images((dir / "train-images.idx").string(),
                           data.train.features);
    rails::save_idx_labels((dir / "train-labels.idx").string(),
                           data.train.labels);
    rails::save_idx_images((dir / "test-images.idx").string(),
                           data.test.features);
    rails::save_idx_labels((dir / "test-labels.idx").string(),
                           data.test.labels);
    std::cout << "wrote " << data.train.size() << " train / "
              << data.test.size() << " test examples to " << out_dir << "\n";
    return 0;
  } catch (const rails::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
