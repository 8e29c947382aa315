// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
// any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "amfm/amfm.hpp"
#include "amfm/cli/app.hpp"

using namespace amfm;
namespace fs = std::filesystem;
using Rng = std::mt19937_64;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

Tensor random_stochastic(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (t.at(r, c) = uniform(rng, 0.01, 1.0));
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= s;
  }
  return t;
}

block::CbamParams random_cbam(std::size_t channels, Rng& rng, double scale) {
  auto p = block::CbamParams::zeros("cbam", channels, {2, 3});
  for (Param* q : p.params()) {
    for (double& v : q->value.data()) v = uniform(rng, -scale, scale);
  }
  return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// Desk-scale run settings shared by the training criteria.
train::TrainConfig desk(mtl::Strategy s) {
  train::TrainConfig c = train::load_config((fs::path(AMFM_SOURCE_DIR) / "configs" / "desk.cfg").string());
  c.strategy = s;
  if (s == mtl::Strategy::pretrain) {
    c.lr_max = 0.005;
    c.epochs = 80;
    c.pretrain_split = 0.25;
  }
  return c;
}

const frontend::Dataset& desk_data() {
  static const frontend::Dataset ds = [] {
    const auto c = desk(mtl::Strategy::extended_mtl);
    return frontend::synth_dataset(64, c.synthetic_noise, c.seed, c.synthetic);
  }();
  return ds;
}

// The trained extended model is reused by the taps criterion.
std::optional<train::TrainResult> g_extended;

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto s = verify::run_gradient_suite();
  bool bounds = true;
  std::string worst;
  double worst_err = 0.0;
  for (const auto& c : s.cases) {
    const bool tight = c.name == "linear" || c.name == "sigmoid" || c.name == "relu" || c.name == "leaky_relu";
    bounds = bounds && c.tolerance <= (tight ? 1e-6 : 1e-4);
    if (c.max_rel_error / c.tolerance > worst_err) {
      worst_err = c.max_rel_error / c.tolerance;
      worst = c.name;
    }
  }
  return {s.passed() && bounds && s.seconds < 60.0,
          std::to_string(s.cases.size()) + " cases, worst " + worst + " at " + fmt(worst_err) +
              " of its bound, " + fmt(s.seconds) + " s"};
}

Verdict mfm_oracle() {
  Rng rng(101);
  std::size_t mismatches = 0, swaps = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = pick(rng, 1, 3), k = pick(rng, 1, 6), t = pick(rng, 1, 6), f = pick(rng, 1, 6);
    const Tensor x = random_tensor({b, 2 * k, t, f}, rng);
    const Tensor y = block::mfm(x);
    Tensor swapped({b, 2 * k, t, f});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < f; ++j) {
            const double lo = x.at(n, c, i, j), hi = x.at(n, c + k, i, j);
            mismatches += y.at(n, c, i, j) != (lo >= hi ? lo : hi);
            swapped.at(n, c, i, j) = hi;
            swapped.at(n, c + k, i, j) = lo;
          }
    swaps += !(block::mfm(swapped) == y);
  }
  return {mismatches == 0 && swaps == 0,
          "1000 tensors, " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(swaps) +
              " swap violations"};
}

Verdict amfm_gating() {
  Rng rng(202);
  std::size_t below = 0, moved = 0;
  double quarter_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = pick(rng, 1, 8);
    const Shape s{pick(rng, 1, 2), c, pick(rng, 1, 6), pick(rng, 1, 6)};
    const Tensor x = random_tensor(s, rng, -5.0, 5.0);
    const Tensor y = block::amfm(x, random_cbam(c, rng, 1.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      below += y[i] < x[i];
      moved += x[i] >= 0.0 && y[i] != x[i];
    }
    const Tensor z = block::amfm(x, block::CbamParams::zeros("zero", c, {2, 3}));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] < 0.0) quarter_err = std::max(quarter_err, std::abs(z[i] - 0.25 * x[i]));
    }
  }
  return {below == 0 && moved == 0 && quarter_err <= 1e-12,
          "1000 inputs, " + std::to_string(below) + " below input, " + std::to_string(moved) +
              " non-negatives changed, zero-param error " + fmt(quarter_err)};
}

Verdict cbam_contraction() {
  Rng rng(303);
  std::size_t expanded = 0, outside = 0;
  double gmin = 1.0, gmax = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = pick(rng, 1, 8);
    const Tensor x = random_tensor({pick(rng, 1, 2), c, pick(rng, 1, 6), pick(rng, 1, 6)}, rng, -100.0, 100.0);
    const auto f = block::cbam_forward(x, random_cbam(c, rng, 0.5));
    for (std::size_t i = 0; i < x.size(); ++i) expanded += std::abs(f.out[i]) > std::abs(x[i]);
    for (const Tensor* g : {&f.channel.gate, &f.spatial.gate}) {
      for (double v : g->data()) {
        outside += !(v > 0.0 && v < 1.0);
        gmin = std::min(gmin, v);
        gmax = std::max(gmax, v);
      }
    }
  }
  return {expanded == 0 && outside == 0,
          "1000 cases, " + std::to_string(expanded) + " expansions, gates in [" + fmt(gmin) + ", " +
              fmt(gmax) + "]"};
}

Verdict frontend_shape() {
  const frontend::MelConfig cfg;
  frontend::AudioClip clip;
  clip.samples.assign(441000, 0.0);
  Rng rng(404);
  for (double& v : clip.samples) v = uniform(rng, -0.1, 0.1);
  const Tensor mel = frontend::melspectrogram(clip, cfg);
  const bool shape = mel.shape() == Shape{1, 1, 499, 256};

  std::size_t frame_errors = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = pick(rng, cfg.win_length, 200000);
    const std::size_t want = 1 + static_cast<std::size_t>(std::floor(double(len - cfg.win_length) / double(cfg.hop_length)));
    frame_errors += frontend::frame_count(len, cfg) != want;
  }
  frontend::AudioClip probe;
  probe.samples.resize(pick(rng, cfg.win_length, 20000));
  frame_errors += frontend::stft_magnitude(probe, cfg).dim(1) != frontend::frame_count(probe.samples.size(), cfg);

  std::size_t off = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const double hz = uniform(rng, 100.0, 20000.0);
    frontend::AudioClip s;
    s.samples.resize(8820);
    for (std::size_t i = 0; i < s.samples.size(); ++i) s.samples[i] = std::sin(2.0 * std::numbers::pi * hz * double(i) / 44100.0);
    const Tensor spec = frontend::stft_magnitude(s, cfg);
    std::size_t best = 0;
    for (std::size_t k = 1; k < spec.dim(0); ++k) {
      if (spec.at(k, 0) > spec.at(best, 0)) best = k;
    }
    const double analytic = hz * double(cfg.n_fft) / 44100.0;
    off += std::abs(double(best) - std::round(analytic)) > 1.0;
  }
  return {shape && frame_errors == 0 && off == 0,
          "10 s clip -> " + shape_str(mel.shape()) + ", " + std::to_string(frame_errors) +
              " frame-count errors, " + std::to_string(off) + "/20 sine peaks off by >1 bin"};
}

Verdict overfit() {
  const auto& data = desk_data();
  bool ok = true;
  std::string detail;
  double total = 0.0;
  for (auto s : {mtl::Strategy::single_task, mtl::Strategy::conventional_mtl,
                 mtl::Strategy::extended_mtl, mtl::Strategy::sequential_mtl}) {
    const auto cfg = desk(s);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = train::train(cfg, data);
    const double secs = seconds_since(t0);
    total += secs;
    const auto rep = train::evaluate(r.model, data);
    const bool two = r.model.emits_abstract();
    const bool hit = rep.acc10 == 1.0 && (!two || rep.acc3 == 1.0) && r.epochs_run <= 300 && secs < 600.0;
    ok = ok && hit;
    detail += std::string(mtl::to_string(s)) + " " + std::to_string(r.epochs_run) + " ep " + fmt(secs) + " s" +
              (hit ? "" : " (acc10 " + fmt(rep.acc10) + " acc3 " + fmt(rep.acc3) + ")") + "; ";
    if (s == mtl::Strategy::extended_mtl) g_extended = std::move(r);
  }

  // Pretrain phase 1: the 10-class head keeps its initial values.
  const auto cfg = desk(mtl::Strategy::pretrain);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::train(cfg, data);
  total += seconds_since(t0);
  bool untouched = r.phase1_end.has_value();
  double acc10 = 0.0, acc3 = 0.0;
  if (untouched) {
    Rng init(cfg.seed);
    const auto fresh = train::ModelGraph::make(cfg.architecture, cfg.strategy, init);
    for (const Param* p : fresh.params()) {
      if (p->name.starts_with(mtl::slot::hidden10) || p->name.starts_with(mtl::slot::out10)) {
        const Tensor* saved = r.phase1_end->find(p->name + ".value");
        untouched = untouched && saved && *saved == p->value;
      }
    }
    const auto phase1 = train::load_model(*r.phase1_end);
    const auto rep = train::evaluate(phase1.model, data);
    acc10 = rep.acc10;
    acc3 = rep.acc3;
  }
  // Chance is 0.1; twice chance is the ceiling for "untrained".
  const bool pre = untouched && acc10 < 0.2 && acc3 > 0.9;
  detail += "pretrain phase 1 acc10 " + fmt(acc10) + " acc3 " + fmt(acc3) +
            (untouched ? ", 10-class head at init" : ", 10-class head moved") + "; total " + fmt(total) + " s";
  return {ok && pre, detail};
}

Verdict loss_ratio() {
  Rng rng(606);
  double loss_err = 0.0, grad_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    for (std::size_t s = 1; s < mtl::kStrategyNames.size(); ++s) {
      const auto strategy = static_cast<mtl::Strategy>(s);
      const std::size_t n = pick(rng, 1, 6), in = pick(rng, 2, 12);
      const auto head = mtl::Head::make(mtl::build_head(strategy, in, pick(rng, 2, 9)), {}, rng);
      const auto f = mtl::head_forward(head, random_tensor({n, in}, rng, -2.0, 2.0));
      const Tensor t10 = random_stochastic(n, 10, rng), t3 = random_stochastic(n, 3, rng);
      const mtl::LossWeights w{1.0, 5.0};
      const auto joint = mtl::mtl_loss(f.logits10, f.logits3, t10, t3, w);
      const auto ce10 = nn::softmax_cross_entropy(f.logits10, t10);
      const auto ce3 = nn::softmax_cross_entropy(f.logits3, t3);
      loss_err = std::max(loss_err, std::abs(joint.loss - (ce3.loss + 5.0 * ce10.loss)));
      const auto gj = mtl::head_backward(head, f, joint.grad10, joint.grad3);
      const auto g10 = mtl::head_backward(head, f, ce10.grad_logits, Tensor::zeros_like(f.logits3));
      const auto g3 = mtl::head_backward(head, f, Tensor::zeros_like(f.logits10), ce3.grad_logits);
      for (std::size_t i = 0; i < gj.weight.size(); ++i) {
        for (std::size_t k = 0; k < gj.weight[i].size(); ++k) {
          const double a = g10.weight[i].empty() ? 0.0 : g10.weight[i][k];
          const double b = g3.weight[i].empty() ? 0.0 : g3.weight[i][k];
          grad_err = std::max(grad_err, std::abs(gj.weight[i][k] - (5.0 * a + b)));
        }
      }
      for (std::size_t k = 0; k < gj.input.size(); ++k) {
        grad_err = std::max(grad_err, std::abs(gj.input[k] - (5.0 * g10.input[k] + g3.input[k])));
      }
    }
  }
  return {loss_err <= 1e-10 && grad_err <= 1e-10,
          "400 heads, loss error " + fmt(loss_err) + ", gradient error " + fmt(grad_err)};
}

Verdict gradnorm() {
  Rng rng(707);
  std::size_t off_sum = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = uniform(rng, 0.01, 1.99);
    const auto w = mtl::gradnorm_update({a, 2.0 - a}, {uniform(rng, 0.1, 3), uniform(rng, 0.1, 3)},
                                        {uniform(rng, 0.1, 3), uniform(rng, 0.1, 3)},
                                        {uniform(rng, 0.01, 20), uniform(rng, 0.01, 20)});
    off_sum += w.w3 + w.w10 != 2.0;
  }
  const auto fixed = mtl::gradnorm_update({1.0, 1.0}, {0.7, 0.7}, {1.2, 1.2}, {3.0, 3.0});
  const auto step = mtl::gradnorm_update({1.0, 1.0}, {0.5, 0.5}, {1.0, 1.0}, {10.0, 1.0}, {1.5, 0.025});
  const bool fixed_ok = fixed.w3 == 1.0 && fixed.w10 == 1.0;
  const bool step_ok = step.w3 < 1.0 && std::abs(step.w3 - 1.5 / 1.775) <= 1e-12 &&
                       std::abs(step.w10 - 2.05 / 1.775) <= 1e-12 && step.w3 + step.w10 == 2.0;
  return {off_sum == 0 && fixed_ok && step_ok,
          std::to_string(off_sum) + "/1000 sums off 2, fixed point " + (fixed_ok ? "held" : "broken") +
              ", asymmetric step w3 " + fmt(step.w3) + " w10 " + fmt(step.w10)};
}

Verdict joint_prediction() {
  Rng rng(808);
  std::size_t uniform_off = 0, support_off = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = pick(rng, 1, 5);
    const Tensor p10 = random_stochastic(n, 10, rng);
    const double beta = uniform(rng, 0.1, 4.0);
    uniform_off += !(mtl::joint_prediction(p10, Tensor({n, 3}, 1.0 / 3.0), {true, beta}).posterior == p10);
    const std::size_t parent = pick(rng, 0, 2);
    Tensor hot({n, 3});
    for (std::size_t b = 0; b < n; ++b) hot.at(b, parent) = 1.0;
    const auto r = mtl::joint_prediction(p10, hot, {true, beta});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < 10; ++c) {
        const bool inside = mtl::index_of(mtl::kParent[c]) == parent;
        support_off += inside ? !(r.posterior.at(b, c) > 0.0) : r.posterior.at(b, c) != 0.0;
      }
  }
  const auto w = mtl::joint_prediction(Tensor({1, 10}, 0.1), Tensor({1, 3}, {0.6, 0.3, 0.1}), {true, 1.0});
  double worked = 0.0;
  for (std::size_t c = 0; c < 10; ++c) {
    const auto a = mtl::kParent[c];
    const double want = a == mtl::Abstract::indoor ? 0.06 / 0.33 : a == mtl::Abstract::outdoor ? 0.03 / 0.33 : 0.01 / 0.33;
    worked = std::max(worked, std::abs(w.posterior.at(0, c) - want));
  }
  return {uniform_off == 0 && support_off == 0 && worked <= 1e-9,
          std::to_string(uniform_off) + " uniform-parent rows changed, " + std::to_string(support_off) +
              " support violations, worked example error " + fmt(worked)};
}

Verdict parameter_budget() {
  std::ostringstream out, err;
  const int code = cli::run({"params", "--config", "default"}, out, err);
  std::istringstream in(out.str());
  std::size_t total = 0;
  in >> total;
  const train::ArchitectureConfig a;
  const std::size_t delta = train::count_params(a, mtl::Strategy::extended_mtl) -
                            train::count_params(a, mtl::Strategy::conventional_mtl);
  return {code == 0 && total > 0 && total <= 700000 && delta == 20200,
          "params reports " + std::to_string(total) + ", extended minus conventional " + std::to_string(delta)};
}

Verdict determinism() {
  auto cfg = desk(mtl::Strategy::extended_mtl);
  cfg.epochs = 3;
  cfg.early_stop_train_acc = 0.0;
  const auto& data = desk_data();
  const std::string a = train::encode_checkpoint(train::train(cfg, data).final_checkpoint);
  const std::string b = train::encode_checkpoint(train::train(cfg, data).final_checkpoint);

  const fs::path dir = fs::temp_directory_path() / ("amfm_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto ck = train::decode_checkpoint(a);
  train::save_checkpoint(ck, dir / "a.ckpt");
  const auto loaded = train::load_checkpoint(dir / "a.ckpt");
  const bool round = loaded == ck && train::encode_checkpoint(loaded) == a;
  fs::remove_all(dir);

  std::size_t silent = 0;
  for (std::size_t cut = 0; cut < a.size(); cut += 1 + cut / 64) {
    try {
      train::decode_checkpoint(std::string_view(a).substr(0, cut));
      ++silent;
    } catch (const train::CheckpointError&) {
    }
  }
  return {a == b && round && silent == 0,
          std::string(a == b ? "same-seed checkpoints identical" : "same-seed checkpoints differ") + ", " +
              (round ? "round trip bit-exact" : "round trip differs") + ", " + std::to_string(silent) +
              " truncations accepted"};
}

Verdict taps_ordering() {
  if (!g_extended) return {false, "no trained checkpoint available"};
  const auto lm = train::load_model(g_extended->final_checkpoint);
  const auto& data = desk_data();
  std::size_t violations = 0;
  double ma = 0.0, mb = 0.0, mc = 0.0;
  for (std::size_t cls = 0; cls < 10; ++cls) {
    const auto taps = train::block_taps(lm.model, data[cls * 64].features, 0);
    const double a = mean_abs(taps.a), b = mean_abs(taps.b), c = mean_abs(taps.c);
    violations += !(b <= a) + !(c >= b);
    ma += a / 10;
    mb += b / 10;
    mc += c / 10;
  }
  return {violations == 0, "block 0 over 10 clips, mean|a| " + fmt(ma) + " mean|b| " + fmt(mb) + " mean|c| " +
                               fmt(mc) + ", " + std::to_string(violations) + " violations"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"mfm_oracle", mfm_oracle},
      {"amfm_gating", amfm_gating},
      {"cbam_contraction", cbam_contraction},
      {"frontend_shape", frontend_shape},
      {"overfit", overfit},
      {"loss_ratio", loss_ratio},
      {"gradnorm", gradnorm},
      {"joint_prediction", joint_prediction},
      {"parameter_budget", parameter_budget},
      {"determinism_persistence", determinism},
      {"taps_ordering", taps_ordering},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
