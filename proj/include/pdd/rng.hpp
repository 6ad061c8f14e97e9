#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace pdd {

/// Seeded pseudo-random source with distributions defined here rather than
/// by the standard library, so draws are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  /// Independent seed for a named sub-stream of `seed`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

 private:
  std::mt19937_64 engine_;
};

}  // namespace pdd
