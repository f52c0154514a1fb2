#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "driftlab/error.hpp"

namespace driftlab {

/// SplitMix64: a 64-bit counter-based generator. The state advances by the
/// golden-ratio increment and each output is a bijective mix of the counter,
/// so a seed fully determines the stream on every platform.
///
/// Gaussians use the Marsaglia polar method, which consumes a variable number
/// of uniforms but only depends on IEEE arithmetic, std::log and std::sqrt.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw ArgumentError("SeededRng::index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  /// Child generator for task `index`; seed XOR index, as used by the worker pool.
  SeededRng fork(std::uint64_t index) const { return SeededRng(seed_ ^ index); }

  /// Fisher-Yates with this generator, so permutations are platform independent.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // UniformRandomBitGenerator
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n i.i.d. draws from N(0, sigma^2).
inline std::vector<double> gaussian(SeededRng& rng, std::size_t n, double sigma) {
  if (!(sigma >= 0.0)) throw ArgumentError("gaussian: sigma must be >= 0");
  std::vector<double> out(n, 0.0);
  if (sigma == 0.0) return out;
  for (auto& x : out) x = sigma * rng.normal();
  return out;
}

}  // namespace driftlab
