#pragma once

// Classification heads for the five training strategies. Every head starts
// with a shared hidden layer on top of the trunk and emits 10-way logits;
// every head except single_task also emits 3-way logits.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amfm/core/layers.hpp"
#include "amfm/core/param.hpp"
#include "amfm/multitask/taxonomy.hpp"

namespace amfm::mtl {

enum class Strategy {
  single_task,
  pretrain,
  conventional_mtl,
  extended_mtl,
  sequential_mtl,
};

inline constexpr std::array<std::string_view, 5> kStrategyNames{
    "single_task", "pretrain", "conventional_mtl", "extended_mtl",
    "sequential_mtl"};

inline std::string_view to_string(Strategy s) {
  return kStrategyNames[static_cast<std::size_t>(s)];
}

inline Strategy parse_strategy(std::string_view name) {
  for (std::size_t i = 0; i < kStrategyNames.size(); ++i) {
    if (kStrategyNames[i] == name) return static_cast<Strategy>(i);
  }
  throw ValidationError("unknown strategy '" + std::string(name) + "'");
}

inline constexpr std::size_t kTaskHidden = 100;

namespace slot {
inline constexpr std::string_view shared = "head.shared";
inline constexpr std::string_view hidden10 = "head.hidden10";
inline constexpr std::string_view hidden3 = "head.hidden3";
inline constexpr std::string_view out10 = "head.out10";
inline constexpr std::string_view out3 = "head.out3";
}  // namespace slot

struct LinearSlot {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;

  std::size_t param_count() const { return in * out + out; }
};

/// Graph description of a head: which linear slots exist and their widths.
struct HeadSpec {
  Strategy strategy = Strategy::extended_mtl;
  std::size_t trunk_dim = 0;
  std::size_t hidden = kTaskHidden;
  std::vector<LinearSlot> slots;

  bool emits_abstract() const { return strategy != Strategy::single_task; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.param_count();
    return n;
  }
};

inline HeadSpec build_head(Strategy strategy, std::size_t trunk_dim,
                           std::size_t hidden = kTaskHidden) {
  if (trunk_dim == 0 || hidden == 0) {
    throw ValidationError("build_head: widths must be positive");
  }
  HeadSpec h{strategy, trunk_dim, hidden, {}};
  auto add = [&](std::string_view name, std::size_t in, std::size_t out) {
    h.slots.push_back({std::string(name), in, out});
  };
  add(slot::shared, trunk_dim, hidden);
  switch (strategy) {
    case Strategy::single_task:
      add(slot::out10, hidden, kNumScenes);
      break;
    case Strategy::conventional_mtl:
      add(slot::out10, hidden, kNumScenes);
      add(slot::out3, hidden, kNumAbstract);
      break;
    case Strategy::pretrain:
    case Strategy::extended_mtl:
      add(slot::hidden10, hidden, hidden);
      add(slot::hidden3, hidden, hidden);
      add(slot::out10, hidden, kNumScenes);
      add(slot::out3, hidden, kNumAbstract);
      break;
    case Strategy::sequential_mtl:
      add(slot::out3, hidden, kNumAbstract);
      add(slot::out10, hidden + kNumAbstract, kNumScenes);
      break;
    default:
      throw ValidationError("build_head: unknown strategy");
  }
  return h;
}

struct LinearParams {
  Param weight;
  Param bias;
};

struct HeadOptions {
  /// Sequential MTL: stop the 10-class loss from reaching the 3-class branch.
  bool detach_sequential = false;
  nn::Activation hidden_activation = nn::Activation::leaky_relu(0.01);
};

struct Head {
  HeadSpec spec;
  HeadOptions options;
  std::vector<LinearParams> layers;  // parallel to spec.slots

  template <typename Rng>
  static Head make(const HeadSpec& spec, const HeadOptions& options, Rng& rng) {
    Head h{spec, options, {}};
    for (const auto& s : spec.slots) h.layers.push_back(init_slot(s, rng));
    return h;
  }

  template <typename Rng>
  static LinearParams init_slot(const LinearSlot& s, Rng& rng) {
    LinearParams lp{Param(s.name + ".weight", Tensor({s.out, s.in})),
                    Param(s.name + ".bias", Tensor({s.out}))};
    he_uniform(lp.weight.value, s.in, rng);
    return lp;
  }

  /// Re-draws the named slots (weights, biases, velocities).
  template <typename Rng>
  void reinitialize(const std::vector<std::string_view>& names, Rng& rng) {
    for (std::string_view n : names) {
      if (auto i = spec.find(n)) layers[*i] = init_slot(spec.slots[*i], rng);
    }
  }

  bool has(std::string_view name) const { return spec.find(name).has_value(); }

  const LinearParams& at(std::string_view name) const {
    auto i = spec.find(name);
    if (!i) throw StateError("head has no slot " + std::string(name));
    return layers[*i];
  }
  LinearParams& at(std::string_view name) {
    return const_cast<LinearParams&>(std::as_const(*this).at(name));
  }

  std::vector<Param*> params() {
    std::vector<Param*> v;
    for (auto& l : layers) {
      v.push_back(&l.weight);
      v.push_back(&l.bias);
    }
    return v;
  }
  std::vector<const Param*> params() const {
    std::vector<const Param*> v;
    for (const auto& l : layers) {
      v.push_back(&l.weight);
      v.push_back(&l.bias);
    }
    return v;
  }
};

struct HeadForward {
  Tensor input;
  Tensor shared_pre, shared;      // shared hidden layer
  Tensor h10_pre, h10, h3_pre, h3;  // extended / pretrain per-task layers
  Tensor seq_input;               // sequential: [shared, logits3]
  Tensor logits10;
  Tensor logits3;  // empty for single_task
};

inline HeadForward head_forward(const Head& head, const Tensor& trunk) {
  const auto act = head.options.hidden_activation;
  auto apply = [&](std::string_view name, const Tensor& x) {
    const auto& l = head.at(name);
    return nn::linear(x, l.weight.value, l.bias.value);
  };
  HeadForward f;
  f.input = trunk;
  f.shared_pre = apply(slot::shared, trunk);
  f.shared = nn::activate(f.shared_pre, act);
  switch (head.spec.strategy) {
    case Strategy::single_task:
      f.logits10 = apply(slot::out10, f.shared);
      break;
    case Strategy::conventional_mtl:
      f.logits10 = apply(slot::out10, f.shared);
      f.logits3 = apply(slot::out3, f.shared);
      break;
    case Strategy::pretrain:
    case Strategy::extended_mtl:
      f.h10_pre = apply(slot::hidden10, f.shared);
      f.h10 = nn::activate(f.h10_pre, act);
      f.h3_pre = apply(slot::hidden3, f.shared);
      f.h3 = nn::activate(f.h3_pre, act);
      f.logits10 = apply(slot::out10, f.h10);
      f.logits3 = apply(slot::out3, f.h3);
      break;
    case Strategy::sequential_mtl: {
      f.logits3 = apply(slot::out3, f.shared);
      const std::size_t batch = f.shared.dim(0), hidden = f.shared.dim(1);
      f.seq_input = Tensor({batch, hidden + kNumAbstract});
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < hidden; ++i) {
          f.seq_input.at(b, i) = f.shared.at(b, i);
        }
        for (std::size_t i = 0; i < kNumAbstract; ++i) {
          f.seq_input.at(b, hidden + i) = f.logits3.at(b, i);
        }
      }
      f.logits10 = apply(slot::out10, f.seq_input);
      break;
    }
  }
  return f;
}

struct HeadGrads {
  Tensor input;
  std::vector<Tensor> weight;  // parallel to spec.slots; empty = untouched
  std::vector<Tensor> bias;

  void accumulate_into(Head& head) const {
    for (std::size_t i = 0; i < head.layers.size(); ++i) {
      if (!weight[i].empty()) head.layers[i].weight.accumulate(weight[i]);
      if (!bias[i].empty()) head.layers[i].bias.accumulate(bias[i]);
    }
  }
};

/// Backward through the head. `d3` may be empty (no 3-class loss).
inline HeadGrads head_backward(const Head& head, const HeadForward& f,
                               const Tensor& d10, const Tensor& d3) {
  const auto act = head.options.hidden_activation;
  HeadGrads g;
  g.weight.resize(head.layers.size());
  g.bias.resize(head.layers.size());
  auto back = [&](std::string_view name, const Tensor& x, const Tensor& dy) {
    const std::size_t i = *head.spec.find(name);
    const auto& l = head.layers[i];
    auto lg = nn::linear_backward(x, l.weight.value, l.bias.value, dy);
    if (g.weight[i].empty()) {
      g.weight[i] = std::move(lg.weight);
      g.bias[i] = std::move(lg.bias);
    } else {
      g.weight[i] += lg.weight;
      g.bias[i] += lg.bias;
    }
    return std::move(lg.input);
  };
  const bool has3 = !d3.empty();
  Tensor dshared = Tensor::zeros_like(f.shared);
  switch (head.spec.strategy) {
    case Strategy::single_task:
      dshared += back(slot::out10, f.shared, d10);
      break;
    case Strategy::conventional_mtl:
      dshared += back(slot::out10, f.shared, d10);
      if (has3) dshared += back(slot::out3, f.shared, d3);
      break;
    case Strategy::pretrain:
    case Strategy::extended_mtl: {
      Tensor dh10 = back(slot::out10, f.h10, d10);
      dshared += back(slot::hidden10, f.shared,
                      nn::activate_backward(f.h10_pre, f.h10, act, dh10));
      if (has3) {
        Tensor dh3 = back(slot::out3, f.h3, d3);
        dshared += back(slot::hidden3, f.shared,
                        nn::activate_backward(f.h3_pre, f.h3, act, dh3));
      }
      break;
    }
    case Strategy::sequential_mtl: {
      const Tensor du = back(slot::out10, f.seq_input, d10);
      const std::size_t batch = f.shared.dim(0), hidden = f.shared.dim(1);
      Tensor dl3 = has3 ? d3 : Tensor({batch, kNumAbstract});
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < hidden; ++i) dshared.at(b, i) += du.at(b, i);
        if (!head.options.detach_sequential) {
          for (std::size_t i = 0; i < kNumAbstract; ++i) {
            dl3.at(b, i) += du.at(b, hidden + i);
          }
        }
      }
      dshared += back(slot::out3, f.shared, dl3);
      break;
    }
  }
  const Tensor dpre = nn::activate_backward(f.shared_pre, f.shared, act, dshared);
  g.input = back(slot::shared, f.input, dpre);
  return g;
}

}  // namespace amfm::mtl
