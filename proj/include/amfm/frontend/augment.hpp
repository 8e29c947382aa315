#pragma once

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

#include "amfm/core/tensor.hpp"
#include "amfm/multitask/taxonomy.hpp"

namespace amfm::frontend {

struct AugmentPolicy {
  bool mixup_enabled = true;
  double mixup_alpha = 1.0;
  bool spec_augment_enabled = true;
  std::size_t n_freq_masks = 2;
  std::size_t freq_mask_max = 24;
  std::size_t n_time_masks = 2;
  std::size_t time_mask_max = 48;

  void validate() const {
    if (!(mixup_alpha > 0.0)) throw ValidationError("mixup alpha must be positive");
  }
};

struct Mixed {
  FeatureMap features;
  mtl::LabelPair label;
};

/// lambda * (x_i, y_i) + (1 - lambda) * (x_j, y_j) on features and both targets.
inline Mixed mixup(const FeatureMap& xi, const FeatureMap& xj,
                   const mtl::LabelPair& yi, const mtl::LabelPair& yj,
                   double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("mixup: lambda must lie in [0,1]");
  }
  xi.require_same_shape(xj, "mixup");
  Mixed m{Tensor::zeros_like(xi), {}};
  const double mu = 1.0 - lambda;
  for (std::size_t i = 0; i < xi.size(); ++i) m.features[i] = lambda * xi[i] + mu * xj[i];
  for (std::size_t c = 0; c < mtl::kNumScenes; ++c) {
    m.label.scene[c] = lambda * yi.scene[c] + mu * yj.scene[c];
  }
  for (std::size_t c = 0; c < mtl::kNumAbstract; ++c) {
    m.label.abstract[c] = lambda * yi.abstract[c] + mu * yj.abstract[c];
  }
  return m;
}

template <typename Rng>
double sample_beta(double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

struct Mask {
  enum class Axis { freq, time };
  Axis axis = Axis::freq;
  std::size_t start = 0;
  std::size_t width = 0;
};

/// Mask widths are uniform in [0, max], with max clamped to the extent.
template <typename Rng>
std::vector<Mask> sample_masks(const AugmentPolicy& policy, std::size_t time,
                               std::size_t freq, Rng& rng) {
  std::vector<Mask> masks;
  auto draw = [&](Mask::Axis axis, std::size_t count, std::size_t max_w,
                  std::size_t extent) {
    max_w = std::min(max_w, extent);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> wd(0, max_w);
      const std::size_t w = wd(rng);
      std::uniform_int_distribution<std::size_t> sd(0, extent - w);
      masks.push_back({axis, sd(rng), w});
    }
  };
  draw(Mask::Axis::freq, policy.n_freq_masks, policy.freq_mask_max, freq);
  draw(Mask::Axis::time, policy.n_time_masks, policy.time_mask_max, time);
  return masks;
}

/// Zeroes the masked mel bands / frames of every [C,T,F] plane in x.
inline FeatureMap apply_masks(const FeatureMap& x, const std::vector<Mask>& masks) {
  const Dims4 d = dims4(x, "spec_augment input");
  FeatureMap y = x;
  for (const Mask& m : masks) {
    const std::size_t extent = m.axis == Mask::Axis::freq ? d.freq : d.time;
    if (m.start + m.width > extent) throw ShapeError("spec_augment: mask out of range");
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t c = 0; c < d.channels; ++c) {
        for (std::size_t t = 0; t < d.time; ++t) {
          for (std::size_t f = 0; f < d.freq; ++f) {
            const std::size_t pos = m.axis == Mask::Axis::freq ? f : t;
            if (pos >= m.start && pos < m.start + m.width) y.at(b, c, t, f) = 0.0;
          }
        }
      }
    }
  }
  return y;
}

/// Frequency and time masking (no time warp).
template <typename Rng>
FeatureMap spec_augment(const FeatureMap& x, const AugmentPolicy& policy, Rng& rng) {
  const Dims4 d = dims4(x, "spec_augment input");
  return apply_masks(x, sample_masks(policy, d.time, d.freq, rng));
}

}  // namespace amfm::frontend
