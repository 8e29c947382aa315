#pragma once

// Finite-difference checks for every differentiable operation, each over a
// batch of random double-precision points. Max-type operations are checked
// only at points whose tie margins exceed kKinkMargin, so no perturbation
// crosses a branch switch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "amfm/block/amfm_block.hpp"
#include "amfm/core/gradcheck.hpp"
#include "amfm/multitask/head.hpp"

namespace amfm::verify {

inline constexpr double kKinkMargin = 1e-3;
inline constexpr std::size_t kDefaultPoints = 100;
/// Nonzero analytic gradients below this are redrawn like kinks: double
/// precision central differences cannot resolve them to relative accuracy.
inline constexpr double kResolvableGradient = 1e-6;

struct CaseResult {
  std::string name;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t points = 0;
  std::size_t rejected = 0;  // samples redrawn for sitting near a kink
  double seconds = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct SuiteResult {
  std::vector<CaseResult> cases;
  double seconds = 0.0;
  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed(); });
  }
};

using Rng = std::mt19937_64;

/// A tensor under test and its analytic gradient at the sample point.
struct Target {
  Tensor* value;
  Tensor grad;
};

/// One sample: mutable inputs, a scalar loss over them, and analytic grads.
struct Sample {
  std::function<double()> loss;
  std::vector<Target> targets;
};

inline bool resolvable(const Sample& s) {
  for (const auto& t : s.targets) {
    for (double g : t.grad.data()) {
      if (g != 0.0 && std::abs(g) < kResolvableGradient) return false;
    }
  }
  return true;
}

// Returns false when the drawn point sits too close to a kink.
using Generator = std::function<bool(Rng&, Sample&)>;

inline double check_sample(Sample& s) {
  double worst = 0.0;
  for (auto& t : s.targets) {
    const Tensor original = *t.value;
    const auto f = [&](const Tensor& p) {
      *t.value = p;
      return s.loss();
    };
    const auto r = nn::gradcheck(f, t.grad, original);
    *t.value = original;
    worst = std::max(worst, r.max_rel_error);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// kink margins
// ---------------------------------------------------------------------------

namespace detail {

/// Smallest gap between the top two values of each group of `n` strided values.
inline double top2_gap(const double* p, std::size_t n, std::size_t stride) {
  if (n < 2) return INFINITY;
  double a = -INFINITY, b = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = p[i * stride];
    if (v > a) {
      b = a;
      a = v;
    } else if (v > b) {
      b = v;
    }
  }
  return a - b;
}

inline double min_abs(const Tensor& t) {
  double m = INFINITY;
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

inline double mfm_margin(const Tensor& x) {
  const Dims4 d = dims4(x);
  const std::size_t half = d.channels / 2;
  double m = INFINITY;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      for (std::size_t i = 0; i < d.plane(); ++i) {
        m = std::min(m, std::abs(x[(b * d.channels + k) * d.plane() + i] -
                                  x[(b * d.channels + half + k) * d.plane() + i]));
      }
    }
  }
  return m;
}

inline double pool_margin(const Tensor& x, nn::Pair window, nn::Pair stride) {
  const Dims4 d = dims4(x);
  double m = INFINITY;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      for (std::size_t t0 = 0; t0 + window[0] <= d.time; t0 += stride[0]) {
        for (std::size_t f0 = 0; f0 + window[1] <= d.freq; f0 += stride[1]) {
          std::vector<double> w;
          for (std::size_t i = 0; i < window[0]; ++i) {
            for (std::size_t j = 0; j < window[1]; ++j) w.push_back(x.at(b, c, t0 + i, f0 + j));
          }
          m = std::min(m, top2_gap(w.data(), w.size(), 1));
        }
      }
    }
  }
  return m;
}

inline double global_max_margin(const Tensor& x) {
  const Dims4 d = dims4(x);
  double m = INFINITY;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      m = std::min(m, top2_gap(&x.at(b, c, 0, 0), d.plane(), 1));
    }
  }
  return m;
}

inline double channel_max_margin(const Tensor& x) {
  const Dims4 d = dims4(x);
  double m = INFINITY;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t i = 0; i < d.plane(); ++i) {
      m = std::min(m, top2_gap(&x.at(b, 0, 0, 0) + i, d.channels, d.plane()));
    }
  }
  return m;
}

inline double cbam_margin(const Tensor& x, const block::CbamCache& c) {
  return std::min({global_max_margin(x), min_abs(c.channel.z_avg), min_abs(c.channel.z_max),
                   channel_max_margin(c.refined)});
}

inline double amfm_margin(const Tensor& x, const block::AmfmCache& c) {
  double m = cbam_margin(x, c.cbam);
  for (std::size_t i = 0; i < x.size(); ++i) m = std::min(m, std::abs(x[i] - c.cbam.out[i]));
  return m;
}

inline block::CbamParams random_cbam(std::size_t channels, Rng& rng, std::size_t kernel = 7) {
  auto p = block::CbamParams::zeros("cbam", channels, {8, kernel});
  for (Param* q : p.params()) q->value = nn::random_tensor(q->value.shape(), rng, -0.5, 0.5);
  return p;
}

inline std::vector<Target> cbam_targets(block::CbamParams& p, const block::CbamGrads& g) {
  auto ps = p.params();
  auto gs = g.tensors();
  std::vector<Target> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back({&ps[i]->value, *gs[i]});
  return out;
}

inline std::uint64_t next_seed(Rng& rng) { return rng(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// cases
// ---------------------------------------------------------------------------

struct Case {
  std::string name;
  double tolerance;
  Generator generator;
};

inline std::vector<Case> default_cases() {
  using namespace nn;
  std::vector<Case> cases;

  cases.push_back({"linear", 1e-6, [](Rng& rng, Sample& s) {
    std::uniform_int_distribution<std::size_t> n(1, 4), k(1, 6);
    const std::size_t b = n(rng), in = k(rng), out = k(rng);
    auto x = std::make_shared<Tensor>(random_tensor({b, in}, rng));
    auto w = std::make_shared<Tensor>(random_tensor({out, in}, rng));
    auto bias = std::make_shared<Tensor>(random_tensor({out}, rng));
    auto proj = std::make_shared<RandomProjection>(Shape{b, out}, detail::next_seed(rng));
    proj->center(linear(*x, *w, *bias));
    s.loss = [=] { return (*proj)(linear(*x, *w, *bias)); };
    auto g = linear_backward(*x, *w, *bias, proj->gradient());
    s.targets = {{x.get(), g.input}, {w.get(), g.weight}, {bias.get(), g.bias}};
    return true;
  }});

  const std::pair<const char*, Activation> acts[] = {{"sigmoid", Activation::sigmoid()},
                                                     {"relu", Activation::relu()},
                                                     {"leaky_relu", Activation::leaky_relu(0.01)}};
  for (const auto& [name, act] : acts) {
    cases.push_back({name, 1e-6, [act = act](Rng& rng, Sample& s) {
      auto x = std::make_shared<Tensor>(random_tensor({3, 7}, rng, -3.0, 3.0));
      if (act.kind != Activation::Kind::sigmoid && detail::min_abs(*x) < kKinkMargin) return false;
      auto proj = std::make_shared<RandomProjection>(x->shape(), detail::next_seed(rng));
      proj->center(activate(*x, act));
      s.loss = [=] { return (*proj)(activate(*x, act)); };
      s.targets = {{x.get(), activate_backward(*x, activate(*x, act), act, proj->gradient())}};
      return true;
    }});
  }

  cases.push_back({"softmax_cross_entropy", 1e-6, [](Rng& rng, Sample& s) {
    std::uniform_int_distribution<std::size_t> n(1, 5), k(2, 10);
    const std::size_t b = n(rng), c = k(rng);
    auto logits = std::make_shared<Tensor>(random_tensor({b, c}, rng, -3.0, 3.0));
    Tensor target({b, c});
    std::uniform_int_distribution<std::size_t> cls(0, c - 1);
    for (std::size_t i = 0; i < b; ++i) target.at(i, cls(rng)) = 1.0;
    s.loss = [=] { return softmax_cross_entropy(*logits, target).loss; };
    s.targets = {{logits.get(), softmax_cross_entropy(*logits, target).grad_logits}};
    return true;
  }});

  cases.push_back({"conv2d", 1e-5, [](Rng& rng, Sample& s) {
    std::uniform_int_distribution<std::size_t> small(1, 3), ext(3, 6), ks(1, 3), st(1, 2),
        pad(0, 1);
    const std::size_t b = small(rng), cin = small(rng), cout = small(rng);
    const std::size_t kh = ks(rng), kw = ks(rng);
    Conv2dGeometry g{{st(rng), st(rng)}, {pad(rng), pad(rng)}};
    auto x = std::make_shared<Tensor>(random_tensor({b, cin, ext(rng), ext(rng)}, rng));
    auto w = std::make_shared<Tensor>(random_tensor({cout, cin, kh, kw}, rng));
    auto bias = std::make_shared<Tensor>(random_tensor({cout}, rng));
    const Tensor y = conv2d(*x, *w, *bias, g);
    auto proj = std::make_shared<RandomProjection>(y.shape(), detail::next_seed(rng));
    proj->center(y);
    s.loss = [=] { return (*proj)(conv2d(*x, *w, *bias, g)); };
    auto gr = conv2d_backward(*x, *w, *bias, g, proj->gradient());
    s.targets = {{x.get(), gr.input}, {w.get(), gr.kernel}, {bias.get(), gr.bias}};
    return true;
  }});

  cases.push_back({"batchnorm_train", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({3, 2, 3, 3}, rng, -2.0, 2.0));
    auto gamma = std::make_shared<Tensor>(random_tensor({2}, rng, 0.5, 1.5));
    auto beta = std::make_shared<Tensor>(random_tensor({2}, rng));
    auto proj = std::make_shared<RandomProjection>(x->shape(), detail::next_seed(rng));
    const auto f = batchnorm2d_train(*x, *gamma, *beta);
    proj->center(f.out);
    s.loss = [=] { return (*proj)(batchnorm2d_train(*x, *gamma, *beta).out); };
    auto g = batchnorm2d_backward(f.cache, *gamma, proj->gradient());
    s.targets = {{x.get(), g.input}, {gamma.get(), g.gamma}, {beta.get(), g.beta}};
    return true;
  }});

  cases.push_back({"batchnorm_infer", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 3, 3, 2}, rng, -2.0, 2.0));
    auto gamma = std::make_shared<Tensor>(random_tensor({3}, rng, 0.5, 1.5));
    auto beta = std::make_shared<Tensor>(random_tensor({3}, rng));
    RunningStats rs(3);
    rs.mean = random_tensor({3}, rng);
    rs.var = random_tensor({3}, rng, 0.5, 2.0);
    rs.populated = true;
    auto proj = std::make_shared<RandomProjection>(x->shape(), detail::next_seed(rng));
    proj->center(batchnorm2d_infer(*x, *gamma, *beta, rs));
    s.loss = [=] { return (*proj)(batchnorm2d_infer(*x, *gamma, *beta, rs)); };
    auto g = batchnorm2d_infer_backward(*x, *gamma, rs, proj->gradient());
    s.targets = {{x.get(), g.input}, {gamma.get(), g.gamma}, {beta.get(), g.beta}};
    return true;
  }});

  const std::pair<const char*, PoolKind> pools[] = {{"max_pool", PoolKind::max},
                                                    {"avg_pool", PoolKind::avg},
                                                    {"global_max_pool", PoolKind::global_max},
                                                    {"global_avg_pool", PoolKind::global_avg}};
  for (const auto& [name, kind] : pools) {
    cases.push_back({name, 1e-4, [kind = kind](Rng& rng, Sample& s) {
      std::uniform_int_distribution<std::size_t> ext(2, 6), win(1, 3), st(1, 2);
      const Pair w{win(rng), win(rng)}, str{st(rng), st(rng)};
      const std::size_t t = std::max(ext(rng), w[0]), f = std::max(ext(rng), w[1]);
      auto x = std::make_shared<Tensor>(random_tensor({2, 2, t, f}, rng));
      if (kind == PoolKind::max && detail::pool_margin(*x, w, str) < kKinkMargin) return false;
      if (kind == PoolKind::global_max && detail::global_max_margin(*x) < kKinkMargin) return false;
      const auto fwd = pool2d(*x, kind, w, str);
      auto proj = std::make_shared<RandomProjection>(fwd.out.shape(), detail::next_seed(rng));
      proj->center(fwd.out);
      s.loss = [=] { return (*proj)(pool2d(*x, kind, w, str).out); };
      s.targets = {{x.get(), pool2d_backward(x->shape(), kind, w, str, fwd, proj->gradient())}};
      return true;
    }});
  }

  cases.push_back({"mfm", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 4, 3, 3}, rng));
    if (detail::mfm_margin(*x) < kKinkMargin) return false;
    auto proj = std::make_shared<RandomProjection>(Shape{2, 2, 3, 3}, detail::next_seed(rng));
    proj->center(block::mfm(*x));
    s.loss = [=] { return (*proj)(block::mfm(*x)); };
    s.targets = {{x.get(), block::mfm_backward(*x, proj->gradient())}};
    return true;
  }});

  cases.push_back({"channel_attention", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 4, 3, 3}, rng));
    auto p = std::make_shared<block::CbamParams>(detail::random_cbam(4, rng));
    const auto c = block::channel_attention_forward(*x, *p);
    if (std::min({detail::global_max_margin(*x), detail::min_abs(c.z_avg),
                  detail::min_abs(c.z_max)}) < kKinkMargin) {
      return false;
    }
    auto proj = std::make_shared<RandomProjection>(Shape{2, 4}, detail::next_seed(rng));
    proj->center(c.gate);
    s.loss = [=] { return (*proj)(block::channel_attention_forward(*x, *p).gate); };
    auto g = block::CbamGrads::zeros_for(*p);
    Tensor dx = block::channel_attention_backward(*x, *p, c, proj->gradient(), g);
    s.targets = {{x.get(), dx}};
    auto ps = p->params();
    s.targets.push_back({&ps[0]->value, g.mlp_w1});
    s.targets.push_back({&ps[1]->value, g.mlp_b1});
    s.targets.push_back({&ps[2]->value, g.mlp_w2});
    s.targets.push_back({&ps[3]->value, g.mlp_b2});
    return true;
  }});

  cases.push_back({"spatial_attention", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 3, 4, 5}, rng));
    auto p = std::make_shared<block::CbamParams>(detail::random_cbam(3, rng, 3));
    if (detail::channel_max_margin(*x) < kKinkMargin) return false;
    const auto c = block::spatial_attention_forward(*x, *p);
    auto proj = std::make_shared<RandomProjection>(c.gate.shape(), detail::next_seed(rng));
    proj->center(c.gate);
    s.loss = [=] { return (*proj)(block::spatial_attention(*x, *p)); };
    auto g = block::CbamGrads::zeros_for(*p);
    Tensor dx = block::spatial_attention_backward(*x, *p, c, proj->gradient(), g);
    auto ps = p->params();
    s.targets = {{x.get(), dx}, {&ps[4]->value, g.spatial_w}, {&ps[5]->value, g.spatial_b}};
    return true;
  }});

  cases.push_back({"cbam", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 4, 4, 4}, rng));
    auto p = std::make_shared<block::CbamParams>(detail::random_cbam(4, rng));
    const auto c = block::cbam_forward(*x, *p);
    if (detail::cbam_margin(*x, c) < kKinkMargin) return false;
    auto proj = std::make_shared<RandomProjection>(x->shape(), detail::next_seed(rng));
    proj->center(c.out);
    s.loss = [=] { return (*proj)(block::cbam(*x, *p)); };
    auto g = block::CbamGrads::zeros_for(*p);
    Tensor dx = block::cbam_backward(*x, *p, c, proj->gradient(), g);
    s.targets = detail::cbam_targets(*p, g);
    s.targets.push_back({x.get(), dx});
    return true;
  }});

  cases.push_back({"amfm", 1e-4, [](Rng& rng, Sample& s) {
    auto x = std::make_shared<Tensor>(random_tensor({2, 4, 4, 4}, rng));
    auto p = std::make_shared<block::CbamParams>(detail::random_cbam(4, rng));
    const auto c = block::amfm_forward(*x, *p);
    if (detail::amfm_margin(*x, c) < kKinkMargin) return false;
    auto proj = std::make_shared<RandomProjection>(x->shape(), detail::next_seed(rng));
    proj->center(c.out);
    s.loss = [=] { return (*proj)(block::amfm(*x, *p)); };
    auto g = block::CbamGrads::zeros_for(*p);
    Tensor dx = block::amfm_backward(*x, *p, c, proj->gradient(), g);
    s.targets = detail::cbam_targets(*p, g);
    s.targets.push_back({x.get(), dx});
    return true;
  }});

  for (const nn::Mode mode : {nn::Mode::train, nn::Mode::infer}) {
    const char* name = mode == nn::Mode::train ? "amfm_block_train" : "amfm_block_infer";
    cases.push_back({name, 1e-4, [mode](Rng& rng, Sample& s) {
      auto x = std::make_shared<Tensor>(random_tensor({2, 2, 6, 6}, rng));
      auto p = std::make_shared<block::AmfmBlockParams>(
          block::AmfmBlockParams::make("blk", 2, 2, {}, {2, 2}, rng));
      p->bn_gamma.value = random_tensor({2}, rng, 0.5, 1.5);
      p->bn_beta.value = random_tensor({2}, rng, -0.5, 0.5);
      for (Param* q : p->cbam.params()) q->value = random_tensor(q->value.shape(), rng, -0.5, 0.5);
      if (mode == nn::Mode::infer) {
        p->bn_stats.mean = random_tensor({2}, rng, -0.5, 0.5);
        p->bn_stats.var = random_tensor({2}, rng, 0.5, 2.0);
        p->bn_stats.populated = true;
      }
      const auto f = block::amfm_block_forward(*x, *p, mode);
      const double margin = std::min({detail::mfm_margin(f.conv_out),
                                      detail::amfm_margin(f.taps.a, f.amfm),
                                      detail::pool_margin(f.taps.c, p->pool, p->pool)});
      if (margin < kKinkMargin) return false;
      auto proj = std::make_shared<RandomProjection>(f.out.shape(), detail::next_seed(rng));
      proj->center(f.out);
      s.loss = [=] { return (*proj)(block::amfm_block_forward(*x, *p, mode).out); };
      auto b = block::amfm_block_backward(*x, *p, f, proj->gradient());
      s.targets = {{x.get(), b.input},
                   {&p->conv_w.value, b.grads.conv_w},
                   {&p->conv_b.value, b.grads.conv_b},
                   {&p->bn_gamma.value, b.grads.bn_gamma},
                   {&p->bn_beta.value, b.grads.bn_beta}};
      for (auto& t : detail::cbam_targets(p->cbam, b.grads.cbam)) s.targets.push_back(t);
      return true;
    }});
  }

  for (std::size_t k = 0; k < mtl::kStrategyNames.size(); ++k) {
    const auto strategy = static_cast<mtl::Strategy>(k);
    cases.push_back({"head_" + std::string(mtl::kStrategyNames[k]), 1e-4,
                     [strategy](Rng& rng, Sample& s) {
      auto head = std::make_shared<mtl::Head>(
          mtl::Head::make(mtl::build_head(strategy, 6, 5), {}, rng));
      auto x = std::make_shared<Tensor>(random_tensor({3, 6}, rng));
      const auto f = mtl::head_forward(*head, *x);
      double margin = detail::min_abs(f.shared_pre);
      if (!f.h10_pre.empty()) margin = std::min({margin, detail::min_abs(f.h10_pre), detail::min_abs(f.h3_pre)});
      if (margin < kKinkMargin) return false;
      auto p10 = std::make_shared<RandomProjection>(f.logits10.shape(), detail::next_seed(rng));
      p10->center(f.logits10);
      std::shared_ptr<RandomProjection> p3;
      if (!f.logits3.empty()) {
        p3 = std::make_shared<RandomProjection>(f.logits3.shape(), detail::next_seed(rng));
        p3->center(f.logits3);
      }
      s.loss = [=] {
        const auto g = mtl::head_forward(*head, *x);
        return (*p10)(g.logits10) + (p3 ? (*p3)(g.logits3) : 0.0);
      };
      auto g = mtl::head_backward(*head, f, p10->gradient(), p3 ? p3->gradient() : Tensor());
      s.targets = {{x.get(), g.input}};
      for (std::size_t i = 0; i < head->layers.size(); ++i) {
        s.targets.push_back({&head->layers[i].weight.value, g.weight[i]});
        s.targets.push_back({&head->layers[i].bias.value, g.bias[i]});
      }
      return true;
    }});
  }
  return cases;
}

inline CaseResult run_case(const Case& c, std::size_t points, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  CaseResult r{c.name, c.tolerance};
  while (r.points < points) {
    Sample s;
    if (!c.generator(rng, s) || !resolvable(s)) {
      if (++r.rejected > 1000 * points) throw NumericError(c.name + ": no kink-free sample found");
      continue;
    }
    r.max_rel_error = std::max(r.max_rel_error, check_sample(s));
    ++r.points;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs every case; a positive `tolerance_override` replaces each case's own bound.
inline SuiteResult run_gradient_suite(std::size_t points = kDefaultPoints,
                                      double tolerance_override = 0.0,
                                      std::uint64_t seed = 20200601) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult s;
  std::uint64_t k = 0;
  for (const auto& c : default_cases()) {
    s.cases.push_back(run_case(c, points, seed + 7919 * k++));
    if (tolerance_override > 0.0) s.cases.back().tolerance = tolerance_override;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

}  // namespace amfm::verify
