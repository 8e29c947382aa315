#pragma once

// Differentiable layer primitives. Every forward has a matching backward that
// is a pure function of the forward inputs (or the cache the forward returns)
// and the upstream gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "amfm/core/tensor.hpp"

namespace amfm::nn {

using Pair = std::array<std::size_t, 2>;

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Conv2dGeometry {
  Pair stride{1, 1};
  Pair padding{0, 0};
};

struct Conv2dGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

namespace detail {

struct ConvShape {
  Dims4 in;
  std::size_t out_channels, kh, kw, out_t, out_f;
};

inline ConvShape conv_shape(const Tensor& x, const Tensor& w, const Tensor& b,
                            const Conv2dGeometry& g) {
  const Dims4 d = dims4(x, "conv2d input");
  if (w.rank() != 4) throw ShapeError("conv2d kernel must be rank 4");
  if (w.dim(1) != d.channels) {
    throw ShapeError("conv2d: input has " + std::to_string(d.channels) +
                     " channels, kernel expects " + std::to_string(w.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) +
                     " does not match " + std::to_string(w.dim(0)) +
                     " output channels");
  }
  if (g.stride[0] == 0 || g.stride[1] == 0) {
    throw ShapeError("conv2d: stride must be positive");
  }
  const auto extent = [](std::size_t n, std::size_t pad, std::size_t k,
                         std::size_t s) -> std::size_t {
    const std::size_t padded = n + 2 * pad;
    if (padded < k) throw ShapeError("conv2d: non-positive output extent");
    return (padded - k) / s + 1;
  };
  ConvShape cs{d, w.dim(0), w.dim(2), w.dim(3), 0, 0};
  cs.out_t = extent(d.time, g.padding[0], cs.kh, g.stride[0]);
  cs.out_f = extent(d.freq, g.padding[1], cs.kw, g.stride[1]);
  return cs;
}

// Range of output indices o such that o*s - p + k lands inside [0, n).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n_out,
                                                       std::size_t n_in,
                                                       std::size_t s,
                                                       std::size_t p,
                                                       std::size_t k) {
  // need o*s + k >= p  and  o*s + k - p < n_in
  std::size_t lo = 0;
  if (k < p) lo = (p - k + s - 1) / s;
  std::size_t hi = 0;  // exclusive
  if (n_in + p > k) hi = std::min(n_out, (n_in + p - k - 1) / s + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of [B,Cin,T,F] with [Cout,Cin,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     const Conv2dGeometry& g = {}) {
  const auto cs = detail::conv_shape(x, w, b, g);
  const Dims4 d = cs.in;
  Tensor y({d.batch, cs.out_channels, cs.out_t, cs.out_f});
  const std::size_t st = g.stride[0], sf = g.stride[1];
  const std::size_t pt = g.padding[0], pf = g.padding[1];
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t co = 0; co < cs.out_channels; ++co) {
      double* yp = &y.at(n, co, 0, 0);
      std::fill(yp, yp + cs.out_t * cs.out_f, b[co]);
      for (std::size_t ci = 0; ci < d.channels; ++ci) {
        const double* xp = &x.at(n, ci, 0, 0);
        for (std::size_t i = 0; i < cs.kh; ++i) {
          const auto [t_lo, t_hi] =
              detail::valid_range(cs.out_t, d.time, st, pt, i);
          for (std::size_t j = 0; j < cs.kw; ++j) {
            const double wv = w.at(co, ci, i, j);
            const auto [f_lo, f_hi] =
                detail::valid_range(cs.out_f, d.freq, sf, pf, j);
            for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
              const double* xrow = xp + (ot * st + i - pt) * d.freq;
              double* yrow = yp + ot * cs.out_f;
              for (std::size_t of = f_lo; of < f_hi; ++of) {
                yrow[of] += wv * xrow[of * sf + j - pf];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w,
                                   const Tensor& b, const Conv2dGeometry& g,
                                   const Tensor& dy) {
  const auto cs = detail::conv_shape(x, w, b, g);
  const Dims4 d = cs.in;
  if (dy.shape() != Shape{d.batch, cs.out_channels, cs.out_t, cs.out_f}) {
    throw ShapeError("conv2d_backward: upstream gradient shape " +
                     shape_str(dy.shape()));
  }
  Conv2dGrads gr{Tensor::zeros_like(x), Tensor::zeros_like(w),
                 Tensor::zeros_like(b)};
  const std::size_t st = g.stride[0], sf = g.stride[1];
  const std::size_t pt = g.padding[0], pf = g.padding[1];
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t co = 0; co < cs.out_channels; ++co) {
      const double* dyp = &dy.at(n, co, 0, 0);
      double db = 0.0;
      for (std::size_t k = 0; k < cs.out_t * cs.out_f; ++k) db += dyp[k];
      gr.bias[co] += db;
      for (std::size_t ci = 0; ci < d.channels; ++ci) {
        const double* xp = &x.at(n, ci, 0, 0);
        double* dxp = &gr.input.at(n, ci, 0, 0);
        for (std::size_t i = 0; i < cs.kh; ++i) {
          const auto [t_lo, t_hi] =
              detail::valid_range(cs.out_t, d.time, st, pt, i);
          for (std::size_t j = 0; j < cs.kw; ++j) {
            const double wv = w.at(co, ci, i, j);
            const auto [f_lo, f_hi] =
                detail::valid_range(cs.out_f, d.freq, sf, pf, j);
            double dw = 0.0;
            for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
              const std::size_t row = (ot * st + i - pt) * d.freq;
              const double* xrow = xp + row;
              double* dxrow = dxp + row;
              const double* dyrow = dyp + ot * cs.out_f;
              for (std::size_t of = f_lo; of < f_hi; ++of) {
                const std::size_t col = of * sf + j - pf;
                dw += xrow[col] * dyrow[of];
                dxrow[col] += wv * dyrow[of];
              }
            }
            gr.kernel.at(co, ci, i, j) += dw;
          }
        }
      }
    }
  }
  return gr;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

namespace detail {
inline void check_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw ShapeError("linear: input and weight must be rank 2");
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input width " + std::to_string(x.dim(1)) +
                     " vs weight " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  }
}
}  // namespace detail

/// y = x W^T + b for x [B,D], W [Dout,D].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::check_linear(x, w, b);
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = &x[n * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &w[o * in];
      double acc = b[o];
      for (std::size_t k = 0; k < in; ++k) acc += wr[k] * xr[k];
      y.at(n, o) = acc;
    }
  }
  return y;
}

inline LinearGrads linear_backward(const Tensor& x, const Tensor& w,
                                   const Tensor& b, const Tensor& dy) {
  detail::check_linear(x, w, b);
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (dy.shape() != Shape{batch, out}) {
    throw ShapeError("linear_backward: upstream gradient shape " +
                     shape_str(dy.shape()));
  }
  LinearGrads g{Tensor::zeros_like(x), Tensor::zeros_like(w),
                Tensor::zeros_like(b)};
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = &x[n * in];
    double* dxr = &g.input[n * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double go = dy.at(n, o);
      if (go == 0.0) continue;
      const double* wr = &w[o * in];
      double* dwr = &g.weight[o * in];
      for (std::size_t k = 0; k < in; ++k) {
        dxr[k] += go * wr[k];
        dwr[k] += go * xr[k];
      }
      g.bias[o] += go;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

enum class Mode { train, infer };

inline constexpr double kBatchNormEps = 1e-5;

/// Exponential moving averages of per-channel batch statistics.
struct RunningStats {
  Tensor mean;
  Tensor var;
  bool populated = false;
  double momentum = 0.1;

  RunningStats() = default;
  explicit RunningStats(std::size_t channels)
      : mean({channels}, 0.0), var({channels}, 1.0) {}
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

struct BatchNormTrainResult {
  Tensor out;
  BatchNormCache cache;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
  std::size_t count = 0;          // elements per channel (B*T*F)
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

namespace detail {
inline void check_bn(const Dims4& d, const Tensor& gamma, const Tensor& beta) {
  if (gamma.shape() != Shape{d.channels} || beta.shape() != Shape{d.channels}) {
    throw ShapeError("batchnorm2d: gamma/beta must have length " +
                     std::to_string(d.channels));
  }
}
}  // namespace detail

/// Per-channel normalisation over B*T*F using the batch's own statistics.
inline BatchNormTrainResult batchnorm2d_train(const Tensor& x,
                                              const Tensor& gamma,
                                              const Tensor& beta,
                                              double eps = kBatchNormEps) {
  const Dims4 d = dims4(x, "batchnorm2d input");
  detail::check_bn(d, gamma, beta);
  BatchNormTrainResult r;
  r.out = Tensor::zeros_like(x);
  r.cache.xhat = Tensor::zeros_like(x);
  r.cache.inv_std.resize(d.channels);
  r.batch_mean.resize(d.channels);
  r.batch_var.resize(d.channels);
  r.count = d.batch * d.plane();
  const auto n = static_cast<double>(r.count);
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* p = &x.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) sum += p[k];
    }
    const double mean = sum / n;
    double sq = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* p = &x.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) {
        const double dv = p[k] - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    r.batch_mean[c] = mean;
    r.batch_var[c] = var;
    r.cache.inv_std[c] = inv_std;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* p = &x.at(b, c, 0, 0);
      double* xh = &r.cache.xhat.at(b, c, 0, 0);
      double* o = &r.out.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) {
        xh[k] = (p[k] - mean) * inv_std;
        o[k] = xh[k] * gamma[c] + beta[c];
      }
    }
  }
  return r;
}

/// Folds one batch's statistics into the running averages; the variance is
/// stored unbiased.
inline void update_running_stats(RunningStats& rs,
                                 const BatchNormTrainResult& r) {
  const std::size_t channels = r.batch_mean.size();
  if (rs.mean.size() != channels) rs = RunningStats(channels);
  const double n = static_cast<double>(r.count);
  const double unbias = r.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double var_u = r.batch_var[c] * unbias;
    if (!rs.populated) {
      rs.mean[c] = r.batch_mean[c];
      rs.var[c] = var_u;
    } else {
      rs.mean[c] = (1.0 - rs.momentum) * rs.mean[c] + rs.momentum * r.batch_mean[c];
      rs.var[c] = (1.0 - rs.momentum) * rs.var[c] + rs.momentum * var_u;
    }
  }
  rs.populated = true;
}

inline Tensor batchnorm2d_infer(const Tensor& x, const Tensor& gamma,
                                const Tensor& beta, const RunningStats& rs,
                                double eps = kBatchNormEps) {
  const Dims4 d = dims4(x, "batchnorm2d input");
  detail::check_bn(d, gamma, beta);
  if (!rs.populated || rs.mean.size() != d.channels) {
    throw StateError("batchnorm2d: inference mode requires populated running stats");
  }
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double scale = gamma[c] / std::sqrt(rs.var[c] + eps);
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* p = &x.at(b, c, 0, 0);
      double* o = &y.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) {
        o[k] = (p[k] - rs.mean[c]) * scale + beta[c];
      }
    }
  }
  return y;
}

/// Full batch-statistics backward of batchnorm2d_train.
inline BatchNormGrads batchnorm2d_backward(const BatchNormCache& cache,
                                           const Tensor& gamma,
                                           const Tensor& dy) {
  const Dims4 d = dims4(dy, "batchnorm2d gradient");
  cache.xhat.require_same_shape(dy, "batchnorm2d_backward");
  BatchNormGrads g{Tensor::zeros_like(dy), Tensor({d.channels}),
                   Tensor({d.channels})};
  const double n = static_cast<double>(d.batch * d.plane());
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* gy = &dy.at(b, c, 0, 0);
      const double* xh = &cache.xhat.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) {
        sum_dy += gy[k];
        sum_dy_xh += gy[k] * xh[k];
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xh;
    const double scale = gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const double* gy = &dy.at(b, c, 0, 0);
      const double* xh = &cache.xhat.at(b, c, 0, 0);
      double* gx = &g.input.at(b, c, 0, 0);
      for (std::size_t k = 0; k < d.plane(); ++k) {
        gx[k] = scale * (n * gy[k] - sum_dy - xh[k] * sum_dy_xh);
      }
    }
  }
  return g;
}

/// Inference-mode backward: a per-channel affine map.
inline BatchNormGrads batchnorm2d_infer_backward(const Tensor& x,
                                                 const Tensor& gamma,
                                                 const RunningStats& rs,
                                                 const Tensor& dy,
                                                 double eps = kBatchNormEps) {
  const Dims4 d = dims4(x, "batchnorm2d input");
  BatchNormGrads g{Tensor::zeros_like(x), Tensor({d.channels}),
                   Tensor({d.channels})};
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(rs.var[c] + eps);
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t t = 0; t < d.time; ++t) {
        for (std::size_t f = 0; f < d.freq; ++f) {
          const double gy = dy.at(b, c, t, f);
          g.input.at(b, c, t, f) = gy * gamma[c] * inv_std;
          g.gamma[c] += gy * (x.at(b, c, t, f) - rs.mean[c]) * inv_std;
          g.beta[c] += gy;
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// pool2d
// ---------------------------------------------------------------------------

enum class PoolKind { max, avg, global_max, global_avg };

struct PoolResult {
  Tensor out;
  std::vector<std::size_t> argmax;  // flat input index per output (max kinds)
};

namespace detail {
inline Pair pooled_extent(const Dims4& d, PoolKind kind, Pair window,
                          Pair stride) {
  if (kind == PoolKind::global_max || kind == PoolKind::global_avg) {
    return {1, 1};
  }
  if (window[0] == 0 || window[1] == 0 || stride[0] == 0 || stride[1] == 0) {
    throw ShapeError("pool2d: window and stride must be positive");
  }
  if (window[0] > d.time || window[1] > d.freq) {
    throw ShapeError("pool2d: window larger than input extent [" +
                     std::to_string(d.time) + "," + std::to_string(d.freq) + "]");
  }
  return {(d.time - window[0]) / stride[0] + 1,
          (d.freq - window[1]) / stride[1] + 1};
}
}  // namespace detail

/// Windowed or global pooling. Max ties resolve to the first element in
/// row-major scan order.
inline PoolResult pool2d(const Tensor& x, PoolKind kind, Pair window = {2, 2},
                         Pair stride = {2, 2}) {
  const Dims4 d = dims4(x, "pool2d input");
  if (kind == PoolKind::global_max || kind == PoolKind::global_avg) {
    window = {d.time, d.freq};
    stride = {d.time, d.freq};
  }
  const Pair ext = detail::pooled_extent(d, kind, window, stride);
  PoolResult r;
  r.out = Tensor({d.batch, d.channels, ext[0], ext[1]});
  const bool is_max = kind == PoolKind::max || kind == PoolKind::global_max;
  if (is_max) r.argmax.resize(r.out.size());
  const double inv_area = 1.0 / static_cast<double>(window[0] * window[1]);
  std::size_t o = 0;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t base = (b * d.channels + c) * d.plane();
      for (std::size_t ot = 0; ot < ext[0]; ++ot) {
        for (std::size_t of = 0; of < ext[1]; ++of, ++o) {
          const std::size_t t0 = ot * stride[0], f0 = of * stride[1];
          if (is_max) {
            std::size_t best = base + t0 * d.freq + f0;
            double bv = x[best];
            for (std::size_t i = 0; i < window[0]; ++i) {
              for (std::size_t j = 0; j < window[1]; ++j) {
                const std::size_t idx = base + (t0 + i) * d.freq + f0 + j;
                if (x[idx] > bv) {
                  bv = x[idx];
                  best = idx;
                }
              }
            }
            r.out[o] = bv;
            r.argmax[o] = best;
          } else {
            double s = 0.0;
            for (std::size_t i = 0; i < window[0]; ++i) {
              for (std::size_t j = 0; j < window[1]; ++j) {
                s += x[base + (t0 + i) * d.freq + f0 + j];
              }
            }
            r.out[o] = s * inv_area;
          }
        }
      }
    }
  }
  return r;
}

inline Tensor pool2d_backward(const Shape& input_shape, PoolKind kind,
                              Pair window, Pair stride, const PoolResult& fwd,
                              const Tensor& dy) {
  Tensor dx(input_shape);
  const Dims4 d = dims4(dx, "pool2d input");
  fwd.out.require_same_shape(dy, "pool2d_backward");
  if (kind == PoolKind::max || kind == PoolKind::global_max) {
    for (std::size_t o = 0; o < dy.size(); ++o) dx[fwd.argmax[o]] += dy[o];
    return dx;
  }
  if (kind == PoolKind::global_avg) {
    window = {d.time, d.freq};
    stride = {d.time, d.freq};
  }
  const std::size_t ot_n = dy.dim(2), of_n = dy.dim(3);
  const double inv_area = 1.0 / static_cast<double>(window[0] * window[1]);
  std::size_t o = 0;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t base = (b * d.channels + c) * d.plane();
      for (std::size_t ot = 0; ot < ot_n; ++ot) {
        for (std::size_t of = 0; of < of_n; ++of, ++o) {
          const double g = dy[o] * inv_area;
          for (std::size_t i = 0; i < window[0]; ++i) {
            for (std::size_t j = 0; j < window[1]; ++j) {
              dx[base + (ot * stride[0] + i) * d.freq + of * stride[1] + j] += g;
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

struct Activation {
  enum class Kind { sigmoid, relu, leaky_relu };
  Kind kind = Kind::relu;
  double slope = 0.01;

  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double slope = 0.01) {
    return {Kind::leaky_relu, slope};
  }
};

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor activate(const Tensor& x, Activation act) {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (act.kind) {
      case Activation::Kind::sigmoid: y[i] = sigmoid(v); break;
      case Activation::Kind::relu: y[i] = v > 0.0 ? v : 0.0; break;
      case Activation::Kind::leaky_relu: y[i] = v > 0.0 ? v : act.slope * v; break;
    }
  }
  return y;
}

/// `y` is the forward output (used by sigmoid); `x` the forward input.
inline Tensor activate_backward(const Tensor& x, const Tensor& y,
                                Activation act, const Tensor& dy) {
  x.require_same_shape(dy, "activate_backward");
  Tensor dx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (act.kind) {
      case Activation::Kind::sigmoid: dx[i] = dy[i] * y[i] * (1.0 - y[i]); break;
      case Activation::Kind::relu: dx[i] = x[i] > 0.0 ? dy[i] : 0.0; break;
      case Activation::Kind::leaky_relu:
        dx[i] = x[i] > 0.0 ? dy[i] : act.slope * dy[i];
        break;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits must be rank 2");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor p = Tensor::zeros_like(logits);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p.at(r, c) = std::exp(logits.at(r, c) - mx);
      z += p.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) p.at(r, c) /= z;
  }
  return p;
}

inline void validate_stochastic_rows(const Tensor& t, const char* what,
                                     double tol = 1e-6) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be rank 2");
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.dim(1); ++c) {
      const double v = t.at(r, c);
      if (!(v >= 0.0)) {
        throw ValidationError(std::string(what) + ": negative entry in row " +
                              std::to_string(r));
      }
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) +
                            " sums to " + std::to_string(s));
    }
  }
}

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Batch-mean cross-entropy against row-stochastic (possibly soft) targets.
inline CrossEntropy softmax_cross_entropy(const Tensor& logits,
                                          const Tensor& target) {
  logits.require_same_shape(target, "softmax_cross_entropy");
  validate_stochastic_rows(target, "softmax_cross_entropy target");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const double inv_b = 1.0 / static_cast<double>(rows);
  CrossEntropy ce;
  ce.grad_logits = Tensor::zeros_like(logits);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(logits.at(r, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      const double logp = logits.at(r, c) - lse;
      const double t = target.at(r, c);
      if (t != 0.0) total -= t * logp;
      ce.grad_logits.at(r, c) = (std::exp(logp) - t) * inv_b;
    }
  }
  ce.loss = total * inv_b;
  return ce;
}

}  // namespace amfm::nn
