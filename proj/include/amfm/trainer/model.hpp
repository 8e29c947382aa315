#pragma once

// Stacked AMFM blocks, global average pooling, and a task head.

#include <cstddef>
#include <string>
#include <vector>

#include "amfm/block/amfm_block.hpp"
#include "amfm/multitask/head.hpp"
#include "amfm/trainer/config.hpp"

namespace amfm::train {

/// Gradients in `ModelGraph::params()` order.
using ModelGrads = std::vector<Tensor>;

struct ModelForward {
  nn::Mode mode = nn::Mode::infer;
  std::vector<Tensor> inputs;  // input of each block
  std::vector<block::AmfmBlockForward> blocks;
  nn::PoolResult gap;
  Tensor trunk;  // [B, K_last]
  mtl::HeadForward head;
};

inline mtl::HeadOptions head_options(const ArchitectureConfig& a) {
  mtl::HeadOptions o;
  o.detach_sequential = a.detach_sequential;
  return o;
}

class ModelGraph {
 public:
  ArchitectureConfig arch;
  std::vector<block::AmfmBlockParams> blocks;
  mtl::Head head;

  template <typename Rng>
  static ModelGraph make(const ArchitectureConfig& arch, mtl::Strategy strategy, Rng& rng) {
    if (arch.widths.empty()) throw ValidationError("model: no blocks configured");
    ModelGraph m;
    m.arch = arch;
    std::size_t in = arch.input_channels;
    for (std::size_t i = 0; i < arch.widths.size(); ++i) {
      m.blocks.push_back(block::AmfmBlockParams::make(
          "block" + std::to_string(i), in, arch.widths[i], arch.cbam, arch.pool, rng));
      in = arch.widths[i];
    }
    m.head = mtl::Head::make(mtl::build_head(strategy, in, arch.head_hidden),
                             head_options(arch), rng);
    return m;
  }

  mtl::Strategy strategy() const { return head.spec.strategy; }
  bool emits_abstract() const { return head.spec.emits_abstract(); }
  std::size_t trunk_dim() const { return arch.widths.back(); }

  /// Canonical order: blocks front to back, then head slots.
  std::vector<Param*> params() {
    std::vector<Param*> v;
    for (auto& b : blocks) {
      for (Param* p : b.params()) v.push_back(p);
    }
    for (Param* p : head.params()) v.push_back(p);
    return v;
  }
  std::vector<const Param*> params() const {
    std::vector<const Param*> v;
    for (const auto& b : blocks) {
      for (const Param* p : b.params()) v.push_back(p);
    }
    for (const Param* p : head.params()) v.push_back(p);
    return v;
  }

  void zero_grad() {
    for (Param* p : params()) p->zero_grad();
  }

  ModelForward forward(const Tensor& x, nn::Mode mode) const {
    ModelForward f;
    f.mode = mode;
    Tensor cur = x;
    for (const auto& b : blocks) {
      f.inputs.push_back(cur);
      f.blocks.push_back(block::amfm_block_forward(cur, b, mode));
      cur = f.blocks.back().out;
    }
    f.gap = nn::pool2d(cur, nn::PoolKind::global_avg);
    const std::size_t batch = cur.dim(0), k = cur.dim(1);
    f.trunk = f.gap.out.reshaped({batch, k});
    f.head = mtl::head_forward(head, f.trunk);
    return f;
  }

  /// Folds the batch statistics of a train-mode pass into the running stats.
  void update_running_stats(const ModelForward& f) {
    if (f.mode != nn::Mode::train) throw StateError("running stats need a train-mode pass");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      nn::update_running_stats(blocks[i].bn_stats, f.blocks[i].bn);
    }
  }

  /// Gradients of <d10, logits10> + <d3, logits3>; `d3` may be empty.
  ModelGrads backward(const ModelForward& f, const Tensor& d10, const Tensor& d3) const {
    ModelGrads g;
    const mtl::HeadGrads hg = mtl::head_backward(head, f.head, d10, d3);
    const Tensor& last = f.blocks.back().out;
    Tensor dcur = nn::pool2d_backward(last.shape(), nn::PoolKind::global_avg, {0, 0},
                                      {0, 0}, f.gap,
                                      hg.input.reshaped({last.dim(0), last.dim(1), 1, 1}));
    std::vector<block::AmfmBlockGrads> bg(blocks.size());
    for (std::size_t i = blocks.size(); i-- > 0;) {
      auto r = block::amfm_block_backward(f.inputs[i], blocks[i], f.blocks[i], dcur);
      bg[i] = std::move(r.grads);
      dcur = std::move(r.input);
    }
    for (auto& b : bg) {
      g.push_back(std::move(b.conv_w));
      g.push_back(std::move(b.conv_b));
      g.push_back(std::move(b.bn_gamma));
      g.push_back(std::move(b.bn_beta));
      for (const Tensor* t : b.cbam.tensors()) g.push_back(*t);
    }
    for (std::size_t i = 0; i < head.layers.size(); ++i) {
      const auto& l = head.layers[i];
      g.push_back(hg.weight[i].empty() ? Tensor::zeros_like(l.weight.value) : hg.weight[i]);
      g.push_back(hg.bias[i].empty() ? Tensor::zeros_like(l.bias.value) : hg.bias[i]);
    }
    return g;
  }

  void accumulate(const ModelGrads& g) {
    auto ps = params();
    if (g.size() != ps.size()) throw StateError("model: gradient list does not match params");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->accumulate(g[i]);
  }
};

inline std::size_t count_params(const ModelGraph& m) {
  std::size_t n = 0;
  for (const Param* p : m.params()) n += p->value.size();
  return n;
}

/// Per-block trainable parameters, derived from the widths alone.
inline std::size_t block_param_count(std::size_t in, std::size_t k,
                                     const block::CbamConfig& cbam) {
  const std::size_t conv = 2 * k * in * 9 + 2 * k;
  const std::size_t bn = 2 * k;
  const std::size_t hidden = k / std::min(cbam.reduction, k);
  const std::size_t mlp = hidden * k + hidden + k * hidden + k;
  const std::size_t spatial = 2 * cbam.spatial_kernel * cbam.spatial_kernel + 1;
  return conv + bn + mlp + spatial;
}

inline std::size_t count_params(const ArchitectureConfig& a, mtl::Strategy s) {
  std::size_t n = 0;
  std::size_t in = a.input_channels;
  for (std::size_t k : a.widths) {
    n += block_param_count(in, k, a.cbam);
    in = k;
  }
  return n + mtl::build_head(s, in, a.head_hidden).param_count();
}

struct SlotCount {
  std::string name;
  std::size_t params;
};

/// Parameter count per block and per head slot.
inline std::vector<SlotCount> param_breakdown(const ArchitectureConfig& a, mtl::Strategy s) {
  std::vector<SlotCount> out;
  std::size_t in = a.input_channels;
  for (std::size_t i = 0; i < a.widths.size(); ++i) {
    out.push_back({"block" + std::to_string(i), block_param_count(in, a.widths[i], a.cbam)});
    in = a.widths[i];
  }
  for (const auto& slot : mtl::build_head(s, in, a.head_hidden).slots) {
    out.push_back({slot.name, slot.param_count()});
  }
  return out;
}

}  // namespace amfm::train
