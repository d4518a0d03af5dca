#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace crossgaze {

/// splitmix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);
/// Order-sensitive combination of two seeds, e.g. hash_combine(seed, index).
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
/// FNV-1a over the bytes of `text`.
std::uint64_t hash_string(std::string_view text);

/// Seeded generator whose derived distributions are implemented here rather
/// than via <random> distributions, so streams are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call).
  double normal();
  /// Uniform integer in [0, n), unbiased.
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace crossgaze
