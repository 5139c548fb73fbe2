#pragma once

#include <cstdint>

namespace airwayseg {

/// xorshift64* (Vigna 2016): shifts 12, 25, 27 and output multiplier
/// 0x2545F4914F6CDD1D. The state is seeded through one splitmix64 step
/// (increment 0x9E3779B97F4A7C15) so that any 64-bit seed, including 0,
/// gives a non-zero state. Output is identical on every platform.
class XorShift64Star {
 public:
  explicit XorShift64Star(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    state_ = z == 0 ? 0x9E3779B97F4A7C15ULL : z;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n); n must be positive. Modulo bias is below 2^-40 for n < 2^24.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace airwayseg
