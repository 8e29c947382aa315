#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "amfm/core/param.hpp"

namespace amfm::train {

struct WarmRestarts {
  double lr_max = 0.001;
  double lr_min = 1e-5;
  double period = 100;  // epochs in the first cycle
  double mult = 1.0;    // cycle length growth
};

/// Cosine annealing with warm restarts, evaluated at a (0-based) epoch.
inline double warm_restart_lr(std::size_t epoch, const WarmRestarts& s) {
  double t = static_cast<double>(epoch);
  double len = s.period;
  if (s.mult == 1.0) {
    t = std::fmod(t, len);
  } else {
    while (t >= len) {
      t -= len;
      len *= s.mult;
    }
  }
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * t / len));
}

/// Momentum SGD: v = m v + g, w -= lr v. Gradients are cleared afterwards.
inline void sgd_step(const std::vector<Param*>& params, double lr, double momentum) {
  for (Param* p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
  for (Param* p : params) {
    auto v = p->velocity.data();
    auto g = p->grad.data();
    auto w = p->value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
    p->zero_grad();
  }
}

}  // namespace amfm::train
