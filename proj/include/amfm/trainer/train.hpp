#pragma once

// Epoch loop: shuffled mini-batches, mixup, SpecAugment, momentum SGD with
// warm restarts, optional GradNorm weighting and two-phase pre-training.

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "amfm/frontend/augment.hpp"
#include "amfm/frontend/dataset.hpp"
#include "amfm/trainer/checkpoint.hpp"
#include "amfm/trainer/evaluate.hpp"
#include "amfm/trainer/optim.hpp"

namespace amfm::train {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  int phase = 1;          // pre-training: 1 abstract, 2 specific
  double lr = 0.0;
  double loss3 = std::numeric_limits<double>::quiet_NaN();
  double loss10 = 0.0;
  double train_acc10 = 0.0;
  double train_acc3 = 0.0;
  double val_acc10 = std::numeric_limits<double>::quiet_NaN();
  double val_acc3 = std::numeric_limits<double>::quiet_NaN();
  double w3 = 0.0;
  double w10 = 0.0;
};

struct MetricsLog {
  static constexpr const char* kHeader =
      "epoch,phase,lr,loss3,loss10,train_acc10,train_acc3,val_acc10,val_acc3,w3,w10";
  std::vector<EpochRecord> rows;

  static std::string cell(double v) { return std::isnan(v) ? "" : frontend::format_double(v); }

  static std::string csv_row(const EpochRecord& r) {
    return std::to_string(r.epoch) + "," + std::to_string(r.phase) + "," + cell(r.lr) + "," +
           cell(r.loss3) + "," + cell(r.loss10) + "," + cell(r.train_acc10) + "," +
           cell(r.train_acc3) + "," + cell(r.val_acc10) + "," + cell(r.val_acc3) + "," +
           cell(r.w3) + "," + cell(r.w10);
  }

  std::string csv() const {
    std::string s = std::string(kHeader) + "\n";
    for (const auto& r : rows) s += csv_row(r) + "\n";
    return s;
  }
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, Checkpoint last_good, std::size_t epoch)
      : NumericError(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const Checkpoint& last_good() const { return last_good_; }
  std::size_t epoch() const { return epoch_; }

 private:
  Checkpoint last_good_;
  std::size_t epoch_;
};

struct TrainOptions {
  /// Data-parallel shards per batch. Each shard normalises with its own
  /// batch statistics, so results depend on this value.
  std::size_t threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelGraph model;
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::size_t best_epoch = 0;
  std::optional<Checkpoint> phase1_end;
  std::optional<Checkpoint> phase2_start;
  MetricsLog log;
  mtl::LossWeights final_weights;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

namespace detail {

struct Batch {
  Tensor x;
  Tensor t10;  // [n,10]
  Tensor t3;   // [n,3]
};

template <typename Rng>
Batch make_batch(const frontend::Dataset& ds, const std::vector<std::size_t>& idx,
                 const frontend::AugmentPolicy& aug, Rng& rng) {
  const std::size_t n = idx.size();
  std::vector<FeatureMap> xs;
  std::vector<mtl::LabelPair> ys;
  for (std::size_t i : idx) {
    xs.push_back(ds[i].features);
    ys.push_back(ds[i].label());
  }
  if (aug.mixup_enabled) {
    const double lambda = frontend::sample_beta(aug.mixup_alpha, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<FeatureMap> mx;
    std::vector<mtl::LabelPair> my;
    for (std::size_t i = 0; i < n; ++i) {
      auto m = frontend::mixup(xs[i], xs[perm[i]], ys[i], ys[perm[i]], lambda);
      mx.push_back(std::move(m.features));
      my.push_back(m.label);
    }
    xs = std::move(mx);
    ys = std::move(my);
  }
  if (aug.spec_augment_enabled) {
    for (auto& x : xs) x = frontend::spec_augment(x, aug, rng);
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  Batch b{stack_batch(ptrs), Tensor({n, mtl::kNumScenes}), Tensor({n, mtl::kNumAbstract})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < mtl::kNumScenes; ++c) b.t10.at(i, c) = ys[i].scene[c];
    for (std::size_t c = 0; c < mtl::kNumAbstract; ++c) b.t3.at(i, c) = ys[i].abstract[c];
  }
  return b;
}

inline Tensor rows(const Tensor& t, std::size_t begin, std::size_t end) {
  Shape s = t.shape();
  const std::size_t stride = t.size() / s[0];
  s[0] = end - begin;
  std::vector<double> v(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                        t.storage().begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(s), std::move(v));
}

struct ShardOutput {
  ModelForward f;
  ModelGrads grads;
  double ce10 = 0.0;  // scaled by shard share
  double ce3 = 0.0;
  Tensor g10;  // unweighted, scaled CE gradients (GradNorm probes)
  Tensor g3;
};

inline ShardOutput run_shard(const ModelGraph& m, const Batch& b, std::size_t begin,
                             std::size_t end, const mtl::LossWeights& w, double share) {
  ShardOutput o;
  const Tensor x = rows(b.x, begin, end);
  o.f = m.forward(x, nn::Mode::train);
  auto c10 = nn::softmax_cross_entropy(o.f.head.logits10, rows(b.t10, begin, end));
  o.ce10 = c10.loss * share;
  o.g10 = std::move(c10.grad_logits);
  o.g10 *= share;
  Tensor d10 = o.g10;
  d10 *= m.emits_abstract() ? w.w10 : 1.0;
  Tensor d3;
  if (m.emits_abstract()) {
    auto c3 = nn::softmax_cross_entropy(o.f.head.logits3, rows(b.t3, begin, end));
    o.ce3 = c3.loss * share;
    o.g3 = std::move(c3.grad_logits);
    o.g3 *= share;
    d3 = o.g3;
    d3 *= w.w3;
  }
  o.grads = m.backward(o.f, d10, d3);
  return o;
}

inline double l2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

/// Unweighted per-task gradient norms at the shared head layer: (3, 10).
inline std::array<double, 2> task_grad_norms(const ModelGraph& m,
                                             const std::vector<ShardOutput>& shards) {
  const std::size_t slot = *m.head.spec.find(mtl::slot::shared);
  Tensor s3, s10;
  for (const auto& o : shards) {
    auto h10 = mtl::head_backward(m.head, o.f.head, o.g10, Tensor());
    auto h3 = mtl::head_backward(m.head, o.f.head, Tensor::zeros_like(o.g10), o.g3);
    if (s10.empty()) {
      s10 = h10.weight[slot];
      s3 = h3.weight[slot];
    } else {
      s10 += h10.weight[slot];
      s3 += h3.weight[slot];
    }
  }
  return {l2(s3), l2(s10)};
}

}  // namespace detail

inline TrainResult train(const TrainConfig& config, const frontend::Dataset& train_set,
                         const frontend::Dataset* val_set = nullptr,
                         const TrainOptions& options = {}) {
  config.validate();
  if (train_set.size() < 2) throw ValidationError("train: need at least two training examples");
  if (options.threads < 1) throw ValidationError("train: threads must be >= 1");
  TrainConfig cfg = config;
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  res.model = ModelGraph::make(cfg.architecture, cfg.strategy, rng);
  ModelGraph& model = res.model;

  const bool pretrain = cfg.strategy == mtl::Strategy::pretrain;
  const bool two_task = model.emits_abstract();
  const bool gradnorm = cfg.gradnorm_enabled && two_task && !pretrain;
  std::optional<mtl::PretrainPlan> plan;
  if (pretrain) plan = mtl::pretrain_schedule(cfg.epochs, cfg.pretrain_split);

  mtl::LossWeights weights = pretrain ? plan->abstract_phase.weights : cfg.loss_weights;
  int phase = 1;
  std::size_t phase_start = 0;
  WarmRestarts sched{cfg.lr_max, cfg.lr_min, cfg.restart_period, cfg.restart_mult};
  std::optional<std::array<double, 2>> initial_losses;

  auto snapshot = [&](std::size_t epoch) {
    if (gradnorm) cfg.loss_weights = weights;
    return capture(model, cfg, epoch, rng);
  };

  Checkpoint last_good = snapshot(0);
  double best_score = -1.0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (pretrain && phase == 1 && epoch == plan->abstract_phase.epochs) {
      res.phase1_end = snapshot(epoch);
      model.head.reinitialize({mtl::slot::hidden10, mtl::slot::out10}, rng);
      for (Param* p : model.params()) p->velocity.fill(0.0);
      phase = 2;
      phase_start = epoch;
      weights = plan->specific_phase.weights;
      res.phase2_start = snapshot(epoch);
    }
    const double lr = warm_restart_lr(epoch - phase_start, sched);
    std::shuffle(order.begin(), order.end(), rng);

    double sum10 = 0.0, sum3 = 0.0;
    std::size_t batches = 0;
    std::array<double, 2> probe_norms{0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // A single leftover example has no batch variance; fold it away.
      if (end - start < 2) break;
      const bool last = order.size() - end < 2;
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = detail::make_batch(train_set, idx, cfg.augment, rng);
      const std::size_t n = idx.size();
      const std::size_t shards = std::max<std::size_t>(1, std::min(options.threads, n / 2));
      std::vector<detail::ShardOutput> outs(shards);
      std::vector<std::pair<std::size_t, std::size_t>> ranges;
      for (std::size_t s = 0; s < shards; ++s) ranges.emplace_back(s * n / shards, (s + 1) * n / shards);
      auto work = [&](std::size_t s) {
        const auto [b, e] = ranges[s];
        outs[s] = detail::run_shard(model, batch, b, e, weights,
                                    static_cast<double>(e - b) / static_cast<double>(n));
      };
      if (shards == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t s = 0; s < shards; ++s) pool.emplace_back(work, s);
        for (auto& t : pool) t.join();
      }
      double ce10 = 0.0, ce3 = 0.0;
      for (const auto& o : outs) {
        ce10 += o.ce10;
        ce3 += o.ce3;
      }
      if (!std::isfinite(ce10) || !std::isfinite(ce3)) {
        throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch + 1),
                              last_good, epoch);
      }
      if (gradnorm && last) probe_norms = detail::task_grad_norms(model, outs);
      for (const auto& o : outs) {
        model.accumulate(o.grads);
        model.update_running_stats(o.f);
      }
      try {
        sgd_step(model.params(), lr, cfg.momentum);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " in epoch " + std::to_string(epoch + 1),
                              last_good, epoch);
      }
      sum10 += ce10;
      sum3 += ce3;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.phase = phase;
    rec.lr = lr;
    rec.loss10 = sum10 / static_cast<double>(batches);
    if (two_task) rec.loss3 = sum3 / static_cast<double>(batches);

    if (gradnorm && probe_norms[0] > 0.0 && probe_norms[1] > 0.0) {
      const std::array<double, 2> now{rec.loss3, rec.loss10};
      if (!initial_losses) initial_losses = now;
      weights = mtl::gradnorm_update(weights, now, *initial_losses, probe_norms, cfg.gradnorm);
    }
    rec.w3 = two_task ? weights.w3 : 0.0;
    rec.w10 = two_task ? weights.w10 : 1.0;

    const EvalReport tr = evaluate(model, train_set);
    rec.train_acc10 = tr.acc10;
    rec.train_acc3 = tr.acc3;
    double score = tr.acc10;
    if (val_set && !val_set->empty()) {
      const EvalReport vr = evaluate(model, *val_set, cfg.fusion);
      rec.val_acc10 = vr.acc10;
      rec.val_acc3 = vr.acc3;
      score = vr.acc10;
    }
    res.log.rows.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    last_good = snapshot(epoch + 1);
    res.epochs_run = epoch + 1;
    if (score > best_score) {
      best_score = score;
      res.best_checkpoint = last_good;
      res.best_epoch = epoch + 1;
    }
    if (cfg.early_stop_train_acc > 0.0 && phase == (pretrain ? 2 : 1) &&
        tr.acc10 >= cfg.early_stop_train_acc &&
        (!two_task || pretrain || tr.acc3 >= cfg.early_stop_train_acc)) {
      res.early_stopped = true;
      break;
    }
  }
  res.final_checkpoint = last_good;
  res.final_weights = weights;
  return res;
}

}  // namespace amfm::train
