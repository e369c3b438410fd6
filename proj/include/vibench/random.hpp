#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace vibench {

// Portable random source.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The std:: distributions are implementation-defined, so the
// variates below are derived from raw engine words with fixed formulas:
//
//   uniform01   (word >> 11) * 2^-53, in [0, 1)
//   index(n)    rejection sampling: draw words until
//               word < n * floor((2^64 - 1) / n), return word % n
//   bernoulli   uniform01() < p
//   normal      Box-Muller (cosine branch only); each call consumes two
//               uniforms and returns sqrt(-2 ln(1-u1)) * cos(2 pi u2)
//
// Every variate therefore has a documented, platform-independent cost in
// engine words, which keeps traces reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_word() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = n * (~std::uint64_t{0} / n);
    std::uint64_t word = engine_();
    while (word >= limit) word = engine_();
    return word % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vibench
