#pragma once

#include <string>
#include <vector>

#include "amfm/block/attention.hpp"
#include "amfm/core/layers.hpp"
#include "amfm/core/param.hpp"

namespace amfm::block {

/// conv3x3(2K) -> MFM -> batchnorm -> AMFM -> max-pool.
struct AmfmBlockParams {
  std::size_t in_channels = 0;
  std::size_t channels = 0;  // K, width after MFM
  nn::Pair pool{2, 2};
  Param conv_w, conv_b, bn_gamma, bn_beta;
  nn::RunningStats bn_stats;
  CbamParams cbam;

  template <typename Rng>
  static AmfmBlockParams make(const std::string& prefix, std::size_t in_channels,
                              std::size_t channels, const CbamConfig& cbam_cfg,
                              nn::Pair pool, Rng& rng) {
    if (in_channels == 0 || channels == 0) {
      throw ValidationError("amfm block: channel counts must be positive");
    }
    AmfmBlockParams p;
    p.in_channels = in_channels;
    p.channels = channels;
    p.pool = pool;
    p.conv_w = Param(prefix + ".conv_w", Tensor({2 * channels, in_channels, 3, 3}));
    he_uniform(p.conv_w.value, in_channels * 9, rng);
    p.conv_b = Param(prefix + ".conv_b", Tensor({2 * channels}));
    p.bn_gamma = Param(prefix + ".bn_gamma", Tensor({channels}, 1.0));
    p.bn_beta = Param(prefix + ".bn_beta", Tensor({channels}));
    p.bn_stats = nn::RunningStats(channels);
    p.cbam = CbamParams::make(prefix + ".cbam", channels, cbam_cfg, rng);
    return p;
  }

  std::vector<Param*> params() {
    std::vector<Param*> v{&conv_w, &conv_b, &bn_gamma, &bn_beta};
    for (Param* q : cbam.params()) v.push_back(q);
    return v;
  }
  std::vector<const Param*> params() const {
    std::vector<const Param*> v{&conv_w, &conv_b, &bn_gamma, &bn_beta};
    for (const Param* q : cbam.params()) v.push_back(q);
    return v;
  }
};

/// Inspection points: (a) before attention, (b) after attention, (c) AMFM.
struct BlockTaps {
  FeatureMap a;
  FeatureMap b;
  FeatureMap c;
};

struct AmfmBlockForward {
  nn::Mode mode = nn::Mode::train;
  Tensor conv_out;
  Tensor mfm_out;
  nn::BatchNormTrainResult bn;  // populated in train mode
  AmfmCache amfm;
  nn::PoolResult pool;
  BlockTaps taps;
  Tensor out;
};

struct AmfmBlockGrads {
  Tensor conv_w, conv_b, bn_gamma, bn_beta;
  CbamGrads cbam;

  void accumulate_into(AmfmBlockParams& p) const {
    p.conv_w.accumulate(conv_w);
    p.conv_b.accumulate(conv_b);
    p.bn_gamma.accumulate(bn_gamma);
    p.bn_beta.accumulate(bn_beta);
    cbam.accumulate_into(p.cbam);
  }
};

struct AmfmBlockBackward {
  Tensor input;
  AmfmBlockGrads grads;
};

inline const nn::Conv2dGeometry kBlockConv{{1, 1}, {1, 1}};

/// Train mode normalises with batch statistics (the caller folds
/// `fwd.bn` into the running stats); infer mode uses the running stats.
inline AmfmBlockForward amfm_block_forward(const Tensor& x,
                                           const AmfmBlockParams& p,
                                           nn::Mode mode) {
  const Dims4 d = dims4(x, "amfm block input");
  if (d.channels != p.in_channels) {
    throw ShapeError("amfm block: input has " + std::to_string(d.channels) +
                     " channels, block expects " + std::to_string(p.in_channels));
  }
  AmfmBlockForward f;
  f.mode = mode;
  f.conv_out = nn::conv2d(x, p.conv_w.value, p.conv_b.value, kBlockConv);
  f.mfm_out = mfm(f.conv_out);
  if (mode == nn::Mode::train) {
    f.bn = nn::batchnorm2d_train(f.mfm_out, p.bn_gamma.value, p.bn_beta.value);
    f.taps.a = f.bn.out;
  } else {
    f.taps.a = nn::batchnorm2d_infer(f.mfm_out, p.bn_gamma.value,
                                     p.bn_beta.value, p.bn_stats);
  }
  f.amfm = amfm_forward(f.taps.a, p.cbam);
  f.taps.b = f.amfm.cbam.out;
  f.taps.c = f.amfm.out;
  f.pool = nn::pool2d(f.taps.c, nn::PoolKind::max, p.pool, p.pool);
  f.out = f.pool.out;
  return f;
}

inline AmfmBlockBackward amfm_block_backward(const Tensor& x,
                                             const AmfmBlockParams& p,
                                             const AmfmBlockForward& f,
                                             const Tensor& dout) {
  AmfmBlockBackward r;
  r.grads.cbam = CbamGrads::zeros_for(p.cbam);
  const Tensor dc = nn::pool2d_backward(f.taps.c.shape(), nn::PoolKind::max,
                                        p.pool, p.pool, f.pool, dout);
  const Tensor da = amfm_backward(f.taps.a, p.cbam, f.amfm, dc, r.grads.cbam);
  nn::BatchNormGrads bg =
      f.mode == nn::Mode::train
          ? nn::batchnorm2d_backward(f.bn.cache, p.bn_gamma.value, da)
          : nn::batchnorm2d_infer_backward(f.mfm_out, p.bn_gamma.value,
                                           p.bn_stats, da);
  r.grads.bn_gamma = std::move(bg.gamma);
  r.grads.bn_beta = std::move(bg.beta);
  const Tensor dconv = mfm_backward(f.conv_out, bg.input);
  auto cg = nn::conv2d_backward(x, p.conv_w.value, p.conv_b.value, kBlockConv,
                                dconv);
  r.grads.conv_w = std::move(cg.kernel);
  r.grads.conv_b = std::move(cg.bias);
  r.input = std::move(cg.input);
  return r;
}

struct BlockOutput {
  FeatureMap out;
  BlockTaps taps;
};

inline BlockOutput amfm_block(const Tensor& x, const AmfmBlockParams& p,
                              nn::Mode mode = nn::Mode::infer) {
  AmfmBlockForward f = amfm_block_forward(x, p, mode);
  return {std::move(f.out), std::move(f.taps)};
}

}  // namespace amfm::block
