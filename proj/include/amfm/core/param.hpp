#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "amfm/core/tensor.hpp"

namespace amfm {

/// A trainable tensor with its gradient accumulator and momentum buffer.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor::zeros_like(value)),
        velocity(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }

  void accumulate(const Tensor& g) {
    grad.require_same_shape(g, name.c_str());
    grad += g;
  }
};

/// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename Rng>
void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

}  // namespace amfm
