#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace eplap {

// Deterministic sampling helpers on top of std::mt19937_64.
//
// The standard library only pins down the engine, not the distributions:
// std::normal_distribution and std::shuffle are implementation-defined and
// may differ between toolchains. Generated datasets must be reproducible
// from their seed alone, so the few draws we need are spelled out here.

/// Unbiased integer in [0, bound) via rejection sampling.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal deviates via Box-Muller, one pair per two uniforms.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_unit(rng_);
    double u2 = uniform_unit(rng_);
    while (u1 <= 0.0) u1 = uniform_unit(rng_);  // log(0) guard
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// In-place Fisher-Yates shuffle with explicit draw order.
template <typename T>
void shuffle_deterministic(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace eplap
