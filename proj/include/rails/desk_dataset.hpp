#ifndef RAILS_DESK_DATASET_HPP
#define RAILS_DESK_DATASET_HPP

#include <cstdint>

#include "rails/types.hpp"

namespace rails {

namespace detail {
extern const int kDigitsCount;
extern const int kDigitsSide;
extern const unsigned char kDigitsPixels[];
extern const unsigned char kDigitsLabels[];
}  // namespace detail

// Desk-scale stand-in for a full image benchmark: the bundled UCI
// handwritten digits (8x8) upscaled to 28x28 with a random affine warp per
// example. Train and test draw from disjoint source digits, so test
// examples are never warped copies of training sources. Pixels are byte
// quantized, exactly matching an IDX round trip.
struct DeskDatasetOptions {
  int train_count = 12000;
  int test_count = 2000;
  std::uint64_t seed = 7;
};

struct DeskDataset {
  ExampleSet train;
  ExampleSet test;
};

DeskDataset build_desk_dataset(const DeskDatasetOptions& opts);

}  // namespace rails

#endif  // RAILS_DESK_DATASET_HPP
