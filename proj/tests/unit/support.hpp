#pragma once

// Seeded generators shared by the property tests.

#include <cstdint>
#include <random>

#include "amfm/core/gradcheck.hpp"
#include "amfm/core/tensor.hpp"

namespace amfm::gen {

using Rng = std::mt19937_64;

inline std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Tensor random(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return nn::random_tensor(s, rng, lo, hi);
}

/// Random rank-4 shape with each extent drawn from [lo, hi].
inline Shape random_shape4(Rng& rng, std::size_t lo, std::size_t hi) {
  return {uniform_size(rng, lo, hi), uniform_size(rng, lo, hi), uniform_size(rng, lo, hi),
          uniform_size(rng, lo, hi)};
}

/// Each row a random point on the simplex.
inline Tensor random_stochastic(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += t.at(r, c) = uniform(rng, 0.01, 1.0);
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= s;
  }
  return t;
}

inline Tensor one_hot(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) t.at(r, uniform_size(rng, 0, cols - 1)) = 1.0;
  return t;
}

}  // namespace amfm::gen
