#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pdmp {

/// splitmix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of the index-th child stream of `seed`. Children of distinct
/// (seed, index) pairs are decorrelated, so independent simulations can
/// run concurrently and still reproduce bit-identically.
inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ (0x9E3779B97F4A7C15ull * (index + 1)));
}

/// Uniform generator plus the explicit inverse transforms used throughout.
/// All variates are derived from mt19937_64 output by fixed arithmetic, so
/// a seed pins the entire stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unit exponential via inverse transform; never takes log(0).
  double exponential_unit() { return -std::log(1.0 - uniform01()); }

  double exponential(double rate) { return exponential_unit() / rate; }

  /// Weibull via inverse transform: scale * (-ln U)^(1/shape).
  double weibull(double shape, double scale) {
    return scale * std::pow(exponential_unit(), 1.0 / shape);
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pdmp
