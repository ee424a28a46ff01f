#ifndef RAILS_RNG_HPP
#define RAILS_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rails {

// splitmix64 step; used to whiten seed material.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed plus identifying words
// (input id, class id, a purpose tag...). Streams derived with different
// words are decorrelated, so work can be scheduled in any order.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> words) {
  std::uint64_t s = base ^ 0xa0761d6478bd642fULL;
  for (std::uint64_t w : words) {
    s ^= splitmix64(s) + w;
    s = splitmix64(s);
  }
  return splitmix64(s);
}

// Stable FNV-1a over a string, for mixing layer names into seed derivations.
inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seeded generator with the uniform draws the pipeline needs. All mapping
// from raw 64-bit output to doubles/indices is explicit, so identical seeds
// give identical draw sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53 bits of mantissa.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(unit() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return unit() < p; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Draw from U([-hi, -lo] u [lo, hi]): magnitude uniform in [lo, hi],
  // sign a fair coin.
  double punctured_uniform(double lo, double hi) {
    const double mag = uniform(lo, hi);
    return bernoulli(0.5) ? mag : -mag;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rails

#endif  // RAILS_RNG_HPP
