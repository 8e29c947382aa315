#pragma once

// Desk-scale stand-in for real recordings: each scene class owns a smooth
// random spectral profile over mel bins; examples add Gaussian noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "amfm/frontend/dataset.hpp"

namespace amfm::frontend {

struct SynthConfig {
  std::size_t time = 16;
  std::size_t mel = 32;
  /// Templates depend only on this seed, so train and validation sets drawn
  /// with different sample seeds share the same classes.
  std::uint64_t template_seed = 0x5CE7E5;
};

/// [10, mel] class profiles, constant over time. Each profile is a sum of
/// three random-frequency cosines around a positive offset.
inline Tensor synth_templates(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.template_seed);
  std::uniform_real_distribution<double> freq(0.5, 4.0), amp(0.1, 0.3),
      phase(0.0, 2.0 * std::numbers::pi), offset(0.4, 0.8);
  Tensor t({mtl::kNumScenes, cfg.mel});
  for (std::size_t c = 0; c < mtl::kNumScenes; ++c) {
    const double base = offset(rng);
    double nu[3], a[3], ph[3];
    for (int k = 0; k < 3; ++k) {
      nu[k] = freq(rng);
      a[k] = amp(rng);
      ph[k] = phase(rng);
    }
    for (std::size_t f = 0; f < cfg.mel; ++f) {
      const double x = static_cast<double>(f) / static_cast<double>(cfg.mel);
      double v = base;
      for (int k = 0; k < 3; ++k) {
        v += a[k] * std::cos(2.0 * std::numbers::pi * nu[k] * x + ph[k]);
      }
      t.at(c, f) = v;
    }
  }
  return t;
}

/// n_per_class examples of each scene, in class-major order.
inline Dataset synth_dataset(std::size_t n_per_class, double noise_level,
                             std::uint64_t seed, const SynthConfig& cfg = {}) {
  if (n_per_class == 0) throw ValidationError("synth_dataset: n_per_class must be >= 1");
  const Tensor templates = synth_templates(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.reserve(n_per_class * mtl::kNumScenes);
  for (std::size_t c = 0; c < mtl::kNumScenes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Example ex;
      ex.scene = mtl::scene_from_index(c);
      ex.source = "synthetic/" + std::string(mtl::to_string(ex.scene)) + "_" +
                  std::to_string(i);
      ex.features = FeatureMap({1, 1, cfg.time, cfg.mel});
      for (std::size_t t = 0; t < cfg.time; ++t) {
        for (std::size_t f = 0; f < cfg.mel; ++f) {
          ex.features.at(0, 0, t, f) = templates.at(c, f) + noise_level * noise(rng);
        }
      }
      ds.push_back(std::move(ex));
    }
  }
  return ds;
}

}  // namespace amfm::frontend
