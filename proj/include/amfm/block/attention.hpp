#pragma once

// Max feature map, convolutional block attention, and the attentive max
// feature map that compares a feature map against its attended version.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "amfm/core/layers.hpp"
#include "amfm/core/param.hpp"
#include "amfm/core/tensor.hpp"

namespace amfm::block {

// ---------------------------------------------------------------------------
// MFM
// ---------------------------------------------------------------------------

/// Elementwise max of the first and second channel halves.
inline Tensor mfm(const Tensor& x) {
  const Dims4 d = dims4(x, "mfm input");
  if (d.channels % 2 != 0) {
    throw ShapeError("mfm: channel count must be even, got " +
                     std::to_string(d.channels));
  }
  const std::size_t half = d.channels / 2;
  Tensor y({d.batch, half, d.time, d.freq});
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double* a1 = &x.at(b, k, 0, 0);
      const double* a2 = &x.at(b, half + k, 0, 0);
      double* o = &y.at(b, k, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) o[i] = std::max(a1[i], a2[i]);
    }
  }
  return y;
}

/// Routes each output gradient to the winning half; ties go to the first.
inline Tensor mfm_backward(const Tensor& x, const Tensor& dy) {
  const Dims4 d = dims4(x, "mfm input");
  const std::size_t half = d.channels / 2;
  if (dy.shape() != Shape{d.batch, half, d.time, d.freq}) {
    throw ShapeError("mfm_backward: gradient shape " + shape_str(dy.shape()));
  }
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double* a1 = &x.at(b, k, 0, 0);
      const double* a2 = &x.at(b, half + k, 0, 0);
      const double* g = &dy.at(b, k, 0, 0);
      double* d1 = &dx.at(b, k, 0, 0);
      double* d2 = &dx.at(b, half + k, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) {
        if (a2[i] > a1[i]) {
          d2[i] = g[i];
        } else {
          d1[i] = g[i];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// CBAM parameters
// ---------------------------------------------------------------------------

struct CbamConfig {
  std::size_t reduction = 8;
  std::size_t spatial_kernel = 7;
};

/// Shared channel MLP (C -> C/r -> C) and the k x k spatial convolution.
struct CbamParams {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::size_t kernel = 0;
  Param mlp_w1, mlp_b1, mlp_w2, mlp_b2, spatial_w, spatial_b;

  static CbamParams zeros(const std::string& prefix, std::size_t channels,
                          const CbamConfig& cfg = {}) {
    if (channels == 0) throw ValidationError("cbam: channel count must be positive");
    if (cfg.spatial_kernel % 2 == 0) {
      throw ValidationError("cbam: spatial kernel size must be odd");
    }
    if (cfg.reduction == 0) throw ValidationError("cbam: reduction must be positive");
    CbamParams p;
    p.channels = channels;
    p.hidden = channels / std::min(cfg.reduction, channels);
    p.kernel = cfg.spatial_kernel;
    p.mlp_w1 = Param(prefix + ".mlp_w1", Tensor({p.hidden, channels}));
    p.mlp_b1 = Param(prefix + ".mlp_b1", Tensor({p.hidden}));
    p.mlp_w2 = Param(prefix + ".mlp_w2", Tensor({channels, p.hidden}));
    p.mlp_b2 = Param(prefix + ".mlp_b2", Tensor({channels}));
    p.spatial_w = Param(prefix + ".spatial_w", Tensor({1, 2, p.kernel, p.kernel}));
    p.spatial_b = Param(prefix + ".spatial_b", Tensor({1}));
    return p;
  }

  template <typename Rng>
  static CbamParams make(const std::string& prefix, std::size_t channels,
                         const CbamConfig& cfg, Rng& rng) {
    CbamParams p = zeros(prefix, channels, cfg);
    he_uniform(p.mlp_w1.value, channels, rng);
    he_uniform(p.mlp_w2.value, p.hidden, rng);
    he_uniform(p.spatial_w.value, 2 * p.kernel * p.kernel, rng);
    return p;
  }

  std::vector<Param*> params() {
    return {&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2, &spatial_w, &spatial_b};
  }
  std::vector<const Param*> params() const {
    return {&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2, &spatial_w, &spatial_b};
  }
};

/// Gradients for every CbamParams slot, in the same order as params().
struct CbamGrads {
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2, spatial_w, spatial_b;

  static CbamGrads zeros_for(const CbamParams& p) {
    return {Tensor::zeros_like(p.mlp_w1.value), Tensor::zeros_like(p.mlp_b1.value),
            Tensor::zeros_like(p.mlp_w2.value), Tensor::zeros_like(p.mlp_b2.value),
            Tensor::zeros_like(p.spatial_w.value),
            Tensor::zeros_like(p.spatial_b.value)};
  }

  std::vector<const Tensor*> tensors() const {
    return {&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2, &spatial_w, &spatial_b};
  }

  void accumulate_into(CbamParams& p) const {
    auto ps = p.params();
    auto ts = tensors();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->accumulate(*ts[i]);
  }
};

// ---------------------------------------------------------------------------
// Channel attention
// ---------------------------------------------------------------------------

struct ChannelAttentionCache {
  nn::PoolResult avg, max;
  Tensor v_avg, v_max;  // [B,C]
  Tensor z_avg, z_max;  // pre-ReLU hidden [B,H]
  Tensor h_avg, h_max;  // post-ReLU hidden [B,H]
  Tensor gate;          // [B,C]
};

namespace detail {
/// Sigmoid kept at least one machine epsilon away from 0 and 1, so a gate
/// never fully closes or fully opens in floating point.
inline Tensor gate(const Tensor& logits) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  Tensor g = nn::activate(logits, nn::Activation::sigmoid());
  for (double& v : g.data()) v = std::clamp(v, eps, 1.0 - eps);
  return g;
}

inline void check_channels(const Dims4& d, const CbamParams& p) {
  if (d.channels != p.channels) {
    throw ShapeError("cbam: input has " + std::to_string(d.channels) +
                     " channels, parameters expect " + std::to_string(p.channels));
  }
}
}  // namespace detail

inline ChannelAttentionCache channel_attention_forward(const Tensor& x,
                                                       const CbamParams& p) {
  const Dims4 d = dims4(x, "channel attention input");
  detail::check_channels(d, p);
  ChannelAttentionCache c;
  c.avg = nn::pool2d(x, nn::PoolKind::global_avg);
  c.max = nn::pool2d(x, nn::PoolKind::global_max);
  c.v_avg = c.avg.out.reshaped({d.batch, d.channels});
  c.v_max = c.max.out.reshaped({d.batch, d.channels});
  const auto relu = nn::Activation::relu();
  c.z_avg = nn::linear(c.v_avg, p.mlp_w1.value, p.mlp_b1.value);
  c.z_max = nn::linear(c.v_max, p.mlp_w1.value, p.mlp_b1.value);
  c.h_avg = nn::activate(c.z_avg, relu);
  c.h_max = nn::activate(c.z_max, relu);
  Tensor s = nn::linear(c.h_avg, p.mlp_w2.value, p.mlp_b2.value);
  s += nn::linear(c.h_max, p.mlp_w2.value, p.mlp_b2.value);
  c.gate = detail::gate(s);
  return c;
}

/// sigmoid(MLP(global_avg(x)) + MLP(global_max(x))) as [B,C,1,1].
inline Tensor channel_attention(const Tensor& x, const CbamParams& p) {
  const Dims4 d = dims4(x);
  return channel_attention_forward(x, p).gate.reshaped({d.batch, d.channels, 1, 1});
}

/// `dgate` is [B,C] (or [B,C,1,1]); returns dx and accumulates MLP grads.
inline Tensor channel_attention_backward(const Tensor& x, const CbamParams& p,
                                         const ChannelAttentionCache& c,
                                         const Tensor& dgate, CbamGrads& grads) {
  const Dims4 d = dims4(x);
  const Tensor dg = dgate.reshaped({d.batch, d.channels});
  Tensor ds = Tensor::zeros_like(dg);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds[i] = dg[i] * c.gate[i] * (1.0 - c.gate[i]);
  }
  const auto relu = nn::Activation::relu();
  auto branch = [&](const Tensor& v, const Tensor& z, const Tensor& h) {
    auto g2 = nn::linear_backward(h, p.mlp_w2.value, p.mlp_b2.value, ds);
    grads.mlp_w2 += g2.weight;
    grads.mlp_b2 += g2.bias;
    Tensor dz = nn::activate_backward(z, h, relu, g2.input);
    auto g1 = nn::linear_backward(v, p.mlp_w1.value, p.mlp_b1.value, dz);
    grads.mlp_w1 += g1.weight;
    grads.mlp_b1 += g1.bias;
    return g1.input;
  };
  const Tensor dv_avg = branch(c.v_avg, c.z_avg, c.h_avg);
  const Tensor dv_max = branch(c.v_max, c.z_max, c.h_max);
  const Shape pooled{d.batch, d.channels, 1, 1};
  Tensor dx = nn::pool2d_backward(x.shape(), nn::PoolKind::global_avg, {}, {},
                                  c.avg, dv_avg.reshaped(pooled));
  dx += nn::pool2d_backward(x.shape(), nn::PoolKind::global_max, {}, {}, c.max,
                            dv_max.reshaped(pooled));
  return dx;
}

// ---------------------------------------------------------------------------
// Spatial attention
// ---------------------------------------------------------------------------

struct SpatialAttentionCache {
  Tensor descriptor;                 // [B,2,T,F]: channel mean, channel max
  std::vector<std::size_t> argmax;   // winning channel per (b,t,f)
  Tensor gate;                       // [B,1,T,F]
};

inline nn::Conv2dGeometry spatial_geometry(const CbamParams& p) {
  const std::size_t pad = (p.kernel - 1) / 2;
  return {{1, 1}, {pad, pad}};
}

inline SpatialAttentionCache spatial_attention_forward(const Tensor& x,
                                                       const CbamParams& p) {
  const Dims4 d = dims4(x, "spatial attention input");
  SpatialAttentionCache c;
  c.descriptor = Tensor({d.batch, 2, d.time, d.freq});
  c.argmax.assign(d.batch * d.plane(), 0);
  const double inv_c = 1.0 / static_cast<double>(d.channels);
  for (std::size_t b = 0; b < d.batch; ++b) {
    double* mean = &c.descriptor.at(b, 0, 0, 0);
    double* mx = &c.descriptor.at(b, 1, 0, 0);
    const double* first = &x.at(b, 0, 0, 0);
    std::copy(first, first + d.plane(), mx);
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const double* xp = &x.at(b, ch, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) {
        mean[i] += xp[i];
        if (xp[i] > mx[i]) {
          mx[i] = xp[i];
          c.argmax[b * d.plane() + i] = ch;
        }
      }
    }
    for (std::size_t i = 0; i < d.plane(); ++i) mean[i] *= inv_c;
  }
  const Tensor z = nn::conv2d(c.descriptor, p.spatial_w.value, p.spatial_b.value,
                              spatial_geometry(p));
  c.gate = detail::gate(z);
  return c;
}

/// sigmoid(conv_kxk([mean_c(x); max_c(x)])) as [B,1,T,F].
inline Tensor spatial_attention(const Tensor& x, const CbamParams& p) {
  return spatial_attention_forward(x, p).gate;
}

inline Tensor spatial_attention_backward(const Tensor& x, const CbamParams& p,
                                         const SpatialAttentionCache& c,
                                         const Tensor& dgate, CbamGrads& grads) {
  const Dims4 d = dims4(x);
  c.gate.require_same_shape(dgate, "spatial_attention_backward");
  Tensor dz = Tensor::zeros_like(dgate);
  for (std::size_t i = 0; i < dz.size(); ++i) {
    dz[i] = dgate[i] * c.gate[i] * (1.0 - c.gate[i]);
  }
  auto g = nn::conv2d_backward(c.descriptor, p.spatial_w.value, p.spatial_b.value,
                               spatial_geometry(p), dz);
  grads.spatial_w += g.kernel;
  grads.spatial_b += g.bias;
  Tensor dx = Tensor::zeros_like(x);
  const double inv_c = 1.0 / static_cast<double>(d.channels);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* dmean = &g.input.at(b, 0, 0, 0);
    const double* dmax = &g.input.at(b, 1, 0, 0);
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      double* dxp = &dx.at(b, ch, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) dxp[i] += dmean[i] * inv_c;
    }
    for (std::size_t i = 0; i < d.plane(); ++i) {
      const std::size_t ch = c.argmax[b * d.plane() + i];
      dx[(b * d.channels + ch) * d.plane() + i] += dmax[i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// CBAM
// ---------------------------------------------------------------------------

struct CbamCache {
  ChannelAttentionCache channel;
  Tensor refined;  // channel-gated input
  SpatialAttentionCache spatial;
  Tensor out;
};

inline CbamCache cbam_forward(const Tensor& x, const CbamParams& p) {
  const Dims4 d = dims4(x, "cbam input");
  CbamCache c;
  c.channel = channel_attention_forward(x, p);
  c.refined = Tensor::zeros_like(x);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const double g = c.channel.gate.at(b, ch);
      const double* xp = &x.at(b, ch, 0, 0);
      double* rp = &c.refined.at(b, ch, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) rp[i] = g * xp[i];
    }
  }
  c.spatial = spatial_attention_forward(c.refined, p);
  c.out = Tensor::zeros_like(x);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* sg = &c.spatial.gate.at(b, 0, 0, 0);
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const double* rp = &c.refined.at(b, ch, 0, 0);
      double* op = &c.out.at(b, ch, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) op[i] = sg[i] * rp[i];
    }
  }
  return c;
}

/// Channel gate then spatial gate, each multiplied into the feature map.
inline Tensor cbam(const Tensor& x, const CbamParams& p) {
  return cbam_forward(x, p).out;
}

inline Tensor cbam_backward(const Tensor& x, const CbamParams& p,
                            const CbamCache& c, const Tensor& dy,
                            CbamGrads& grads) {
  const Dims4 d = dims4(x);
  x.require_same_shape(dy, "cbam_backward");
  Tensor dsg({d.batch, 1, d.time, d.freq});
  Tensor drefined = Tensor::zeros_like(x);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* sg = &c.spatial.gate.at(b, 0, 0, 0);
    double* dsgp = &dsg.at(b, 0, 0, 0);
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const double* g = &dy.at(b, ch, 0, 0);
      const double* rp = &c.refined.at(b, ch, 0, 0);
      double* dr = &drefined.at(b, ch, 0, 0);
      for (std::size_t i = 0; i < d.plane(); ++i) {
        dsgp[i] += g[i] * rp[i];
        dr[i] = g[i] * sg[i];
      }
    }
  }
  drefined += spatial_attention_backward(c.refined, p, c.spatial, dsg, grads);
  Tensor dgate({d.batch, d.channels});
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const double g = c.channel.gate.at(b, ch);
      const double* xp = &x.at(b, ch, 0, 0);
      const double* dr = &drefined.at(b, ch, 0, 0);
      double* dxp = &dx.at(b, ch, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < d.plane(); ++i) {
        acc += dr[i] * xp[i];
        dxp[i] = dr[i] * g;
      }
      dgate.at(b, ch) = acc;
    }
  }
  dx += channel_attention_backward(x, p, c.channel, dgate, grads);
  return dx;
}

// ---------------------------------------------------------------------------
// AMFM
// ---------------------------------------------------------------------------

struct AmfmCache {
  CbamCache cbam;
  Tensor out;
};

inline AmfmCache amfm_forward(const Tensor& x, const CbamParams& p) {
  AmfmCache c;
  c.cbam = cbam_forward(x, p);
  c.out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    c.out[i] = std::max(x[i], c.cbam.out[i]);
  }
  return c;
}

/// Elementwise max of a feature map and its CBAM-attended version.
inline Tensor amfm(const Tensor& x, const CbamParams& p) {
  return amfm_forward(x, p).out;
}

/// The identity branch wins ties; where the attended branch wins, the
/// gradient flows through the whole gate computation.
inline Tensor amfm_backward(const Tensor& x, const CbamParams& p,
                            const AmfmCache& c, const Tensor& dy,
                            CbamGrads& grads) {
  x.require_same_shape(dy, "amfm_backward");
  Tensor dx = Tensor::zeros_like(x);
  Tensor dattended = Tensor::zeros_like(x);
  bool any_attended = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (c.cbam.out[i] > x[i]) {
      dattended[i] = dy[i];
      any_attended = true;
    } else {
      dx[i] = dy[i];
    }
  }
  if (any_attended) dx += cbam_backward(x, p, c.cbam, dattended, grads);
  return dx;
}

}  // namespace amfm::block
