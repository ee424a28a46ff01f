#include "rails/desk_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rails/errors.hpp"
#include "rails/rng.hpp"

namespace rails {

namespace {

constexpr int kOutSide = 28;
constexpr int kClasses = 10;
constexpr double kTestSourceFraction = 0.25;

// Bilinear sample of one 8x8 source at fractional coordinates, zero
// outside the grid. Source levels are 0..16.
double sample_source(const unsigned char* img, double sx, double sy) {
  const int side = detail::kDigitsSide;
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;
  auto at = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= side || y >= side) return 0.0;
    return static_cast<double>(img[y * side + x]);
  };
  return at(x0, y0) * (1 - fx) * (1 - fy) + at(x0 + 1, y0) * fx * (1 - fy) +
         at(x0, y0 + 1) * (1 - fx) * fy + at(x0 + 1, y0 + 1) * fx * fy;
}

// Renders source digit `src` into a 28x28 byte image under a random
// rotation, scale and shift drawn from the per-example stream.
void render(const unsigned char* src, Rng& rng, Eigen::Ref<Vector> out) {
  const double theta = rng.uniform(-0.18, 0.18);  // ~10 degrees
  const double scale = rng.uniform(0.90, 1.10);
  const double dx = rng.uniform(-1.6, 1.6);
  const double dy = rng.uniform(-1.6, 1.6);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double zoom = (static_cast<double>(kOutSide) /
                       static_cast<double>(detail::kDigitsSide)) *
                      scale;
  const double out_c = (kOutSide - 1) / 2.0;
  const double src_c = (detail::kDigitsSide - 1) / 2.0;
  for (int r = 0; r < kOutSide; ++r) {
    for (int c = 0; c < kOutSide; ++c) {
      const double ux = (c - out_c - dx) / zoom;
      const double uy = (r - out_c - dy) / zoom;
      const double sx = src_c + cos_t * ux + sin_t * uy;
      const double sy = src_c - sin_t * ux + cos_t * uy;
      const double level = sample_source(src, sx, sy);
      const auto byte = static_cast<int>(
          std::lround(std::min(16.0, std::max(0.0, level)) / 16.0 * 255.0));
      out[r * kOutSide + c] = static_cast<double>(byte) / 255.0;
    }
  }
}

ExampleSet synthesize(const std::vector<std::vector<int>>& sources, int count,
                      std::uint64_t seed, std::uint64_t salt) {
  ExampleSet set;
  set.class_count = kClasses;
  set.features.resize(kOutSide * kOutSide, count);
  set.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int label = i % kClasses;
    Rng rng(derive_seed(seed, {salt, static_cast<std::uint64_t>(i)}));
    const auto& pool = sources[static_cast<std::size_t>(label)];
    const int src_id = pool[static_cast<std::size_t>(i / kClasses) % pool.size()];
    render(detail::kDigitsPixels +
               static_cast<std::size_t>(src_id) * detail::kDigitsSide *
                   detail::kDigitsSide,
           rng, set.features.col(i));
    set.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(label);
  }
  return set;
}

}  // namespace

DeskDataset build_desk_dataset(const DeskDatasetOptions& opts) {
  if (opts.train_count < kClasses || opts.test_count < kClasses) {
    throw ValidationError("desk dataset: counts must cover every class");
  }
  // Partition the source digits by class, then split each class into
  // disjoint train/test source pools with a seeded shuffle.
  std::vector<std::vector<int>> by_class(kClasses);
  for (int i = 0; i < detail::kDigitsCount; ++i) {
    by_class[detail::kDigitsLabels[i]].push_back(i);
  }
  std::vector<std::vector<int>> train_sources(kClasses);
  std::vector<std::vector<int>> test_sources(kClasses);
  Rng split_rng(derive_seed(opts.seed, {0x73706c6974ULL}));
  for (int c = 0; c < kClasses; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[split_rng.index(i)]);
    }
    const auto test_n = static_cast<std::size_t>(
        std::max(1.0, std::floor(kTestSourceFraction *
                                 static_cast<double>(pool.size()))));
    test_sources[c].assign(pool.begin(), pool.begin() + test_n);
    train_sources[c].assign(pool.begin() + test_n, pool.end());
  }
  DeskDataset data;
  data.train = synthesize(train_sources, opts.train_count, opts.seed,
                          0x747261696eULL);
  data.test = synthesize(test_sources, opts.test_count, opts.seed,
                         0x74657374ULL);
  return data;
}

}  // namespace rails
