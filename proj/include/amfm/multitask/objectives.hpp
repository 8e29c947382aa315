#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "amfm/core/layers.hpp"
#include "amfm/multitask/taxonomy.hpp"

namespace amfm::mtl {

// ---------------------------------------------------------------------------
// Weighted two-task loss
// ---------------------------------------------------------------------------

/// Abstract-task weight w3 and specific-task weight w10.
struct LossWeights {
  double w3 = 1.0;
  double w10 = 5.0;

  void validate() const {
    if (!(w3 >= 0.0) || !(w10 >= 0.0)) {
      throw ValidationError("loss weights must be non-negative");
    }
    if (w3 == 0.0 && w10 == 0.0) {
      throw ValidationError("loss weights must not both be zero");
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Grid-search presets 1:1 .. 1:5 (abstract : specific).
inline LossWeights ratio_preset(int specific) {
  if (specific < 1 || specific > 5) {
    throw ValidationError("ratio preset must be one of 1..5");
  }
  return {1.0, static_cast<double>(specific)};
}

struct MtlLoss {
  double loss = 0.0;
  double ce10 = 0.0;
  double ce3 = 0.0;
  Tensor grad10;
  Tensor grad3;
};

/// w3 * CE3 + w10 * CE10 with per-head logit gradients.
inline MtlLoss mtl_loss(const Tensor& logits10, const Tensor& logits3,
                        const Tensor& target10, const Tensor& target3,
                        const LossWeights& w) {
  w.validate();
  auto c10 = nn::softmax_cross_entropy(logits10, target10);
  auto c3 = nn::softmax_cross_entropy(logits3, target3);
  MtlLoss r;
  r.ce10 = c10.loss;
  r.ce3 = c3.loss;
  r.loss = w.w3 * c3.loss + w.w10 * c10.loss;
  r.grad10 = std::move(c10.grad_logits);
  r.grad10 *= w.w10;
  r.grad3 = std::move(c3.grad_logits);
  r.grad3 *= w.w3;
  return r;
}

// ---------------------------------------------------------------------------
// GradNorm
// ---------------------------------------------------------------------------

struct GradNormConfig {
  double alpha = 1.5;
  double lr = 0.025;
};

inline constexpr double kMinTaskWeight = 1e-4;

namespace detail {
inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

// Returns (w_first, w_second) with w_first + w_second == 2 exactly in
// floating point and an exact swap when the inputs are swapped.
inline std::pair<double, double> renormalize_to_two(double a, double b) {
  if (a == b) return {1.0, 1.0};
  const bool a_small = a < b;
  double small = 2.0 * (a_small ? a : b) / (a + b);
  small = std::clamp(small, kMinTaskWeight, 1.0);
  const double large = 2.0 - small;
  return a_small ? std::pair{small, large} : std::pair{large, small};
}
}  // namespace detail

/// One GradNorm weight step. All pairs are ordered (3-class, 10-class);
/// `grad_norms` are unweighted task-gradient norms at the last shared layer.
inline LossWeights gradnorm_update(const LossWeights& w,
                                   std::array<double, 2> losses_now,
                                   std::array<double, 2> losses_initial,
                                   std::array<double, 2> grad_norms,
                                   const GradNormConfig& cfg = {}) {
  w.validate();
  for (int i = 0; i < 2; ++i) {
    if (!(losses_now[i] > 0.0) || !(losses_initial[i] > 0.0) ||
        !(grad_norms[i] > 0.0)) {
      throw ValidationError("gradnorm_update: losses and norms must be positive");
    }
  }
  const std::array<double, 2> weights{w.w3, w.w10};
  std::array<double, 2> ratio{}, weighted_norm{};
  for (int i = 0; i < 2; ++i) {
    ratio[i] = losses_now[i] / losses_initial[i];
    weighted_norm[i] = weights[i] * grad_norms[i];
  }
  const double mean_ratio = 0.5 * (ratio[0] + ratio[1]);
  const double mean_norm = 0.5 * (weighted_norm[0] + weighted_norm[1]);
  std::array<double, 2> stepped{};
  for (int i = 0; i < 2; ++i) {
    const double target = mean_norm * std::pow(ratio[i] / mean_ratio, cfg.alpha);
    // d/dw_i |w_i g_i - target| with the target held constant.
    const double grad = detail::sign(weighted_norm[i] - target) * grad_norms[i];
    stepped[i] = std::max(weights[i] - cfg.lr * grad, kMinTaskWeight);
  }
  const auto [w3, w10] = detail::renormalize_to_two(stepped[0], stepped[1]);
  return {w3, w10};
}

// ---------------------------------------------------------------------------
// Joint prediction
// ---------------------------------------------------------------------------

struct FusionConfig {
  bool enabled = false;
  double beta = 1.0;
};

struct FusedPrediction {
  Tensor posterior;             // [B,10]
  std::vector<bool> fell_back;  // rows where fusion annihilated all mass
};

/// fused(c) proportional to p10(c) * p3(parent(c))^beta, per row.
inline FusedPrediction joint_prediction(const Tensor& p10, const Tensor& p3,
                                        const FusionConfig& cfg) {
  if (p10.rank() != 2 || p10.dim(1) != kNumScenes || p3.rank() != 2 ||
      p3.dim(1) != kNumAbstract || p10.dim(0) != p3.dim(0)) {
    throw ShapeError("joint_prediction: expected [B,10] and [B,3] posteriors");
  }
  if (!(cfg.beta >= 0.0)) throw ValidationError("fusion beta must be non-negative");
  nn::validate_stochastic_rows(p10, "joint_prediction p10");
  nn::validate_stochastic_rows(p3, "joint_prediction p3");
  FusedPrediction r{Tensor::zeros_like(p10),
                    std::vector<bool>(p10.dim(0), false)};
  for (std::size_t b = 0; b < p10.dim(0); ++b) {
    double top = 0.0;
    for (std::size_t a = 0; a < kNumAbstract; ++a) top = std::max(top, p3.at(b, a));
    // Parent factors relative to the row's best parent; the fused row keeps
    // the mass of its p10 row, so a flat parent leaves p10 bit-identical.
    double mass = 0.0, z = 0.0;
    for (std::size_t c = 0; c < kNumScenes; ++c) {
      const double factor = std::pow(p3.at(b, index_of(kParent[c])) / top, cfg.beta);
      const double v = p10.at(b, c) * factor;
      r.posterior.at(b, c) = v;
      mass += p10.at(b, c);
      z += v;
    }
    if (z > 0.0) {
      const double scale = mass / z;
      for (std::size_t c = 0; c < kNumScenes; ++c) r.posterior.at(b, c) *= scale;
    } else {
      r.fell_back[b] = true;
      for (std::size_t c = 0; c < kNumScenes; ++c) {
        r.posterior.at(b, c) = p10.at(b, c);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Two-phase pre-training schedule
// ---------------------------------------------------------------------------

struct PretrainPhase {
  std::size_t epochs = 0;
  LossWeights weights;
};

struct PretrainPlan {
  PretrainPhase abstract_phase;  // 3-class only
  PretrainPhase specific_phase;  // 10-class only, fresh 10-class head
};

inline PretrainPlan pretrain_schedule(std::size_t total_epochs, double split) {
  if (!(split > 0.0 && split < 1.0)) {
    throw ValidationError("pretrain split must lie strictly inside (0,1)");
  }
  const auto first = static_cast<std::size_t>(
      std::llround(split * static_cast<double>(total_epochs)));
  if (first == 0 || first >= total_epochs) {
    throw ValidationError("pretrain split leaves an empty phase for " +
                          std::to_string(total_epochs) + " epochs");
  }
  return {{first, {1.0, 0.0}}, {total_epochs - first, {0.0, 1.0}}};
}

}  // namespace amfm::mtl
