#pragma once

#include <cstdint>

#include "pdd/rng.hpp"
#include "pdd/tensor.hpp"

namespace pdd::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> values(element_count(shape));
  for (auto& v : values) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(values));
}

// Uniform magnitudes in [margin, 1] with random signs: keeps kinks of relu
// and clamp away from the finite-difference stencil.
inline Tensor away_from_zero(Shape shape, std::uint64_t seed, double margin = 1e-2) {
  Rng rng(seed);
  std::vector<double> values(element_count(shape));
  for (auto& v : values) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, 1.0);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace pdd::testing
