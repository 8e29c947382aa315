#pragma once

// Command-line front end. `run` returns the process exit code: 0 success,
// 1 usage or validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "amfm/frontend/synth.hpp"
#include "amfm/trainer/checkpoint.hpp"
#include "amfm/trainer/evaluate.hpp"
#include "amfm/trainer/featmap.hpp"
#include "amfm/trainer/train.hpp"
#include "amfm/verify/gradient_suite.hpp"

namespace amfm::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("AMFM_SEED");
  if (!v || !*v) return std::nullopt;
  const std::string s(v);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ValidationError("AMFM_SEED must be a non-negative integer, got '" + s + "'");
  }
  return out;
}

/// --seed wins, then AMFM_SEED, then the fallback.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return fallback;
}

inline void require_absent(const std::vector<fs::path>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) throw ValidationError(p.string() + " exists (use --force to overwrite)");
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  train::write_files({{path, text}}, true);
}

inline std::string confusion_csv(const auto& m, const auto& names) {
  std::string s = "true\\predicted";
  for (const auto& n : names) s += "," + std::string(n);
  s += "\n";
  for (std::size_t r = 0; r < m.size(); ++r) {
    s += std::string(names[r]);
    for (auto v : m[r]) s += "," + std::to_string(v);
    s += "\n";
  }
  return s;
}

}  // namespace detail

struct GradcheckArgs {
  double tolerance = 0.0;
  std::size_t points = verify::kDefaultPoints;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto r = verify::run_gradient_suite(a.points, a.tolerance);
  for (const auto& c : r.cases) {
    out << c.name << " max_rel_error " << frontend::format_double(c.max_rel_error)
        << " tolerance " << frontend::format_double(c.tolerance) << " points " << c.points
        << " redrawn " << c.rejected << (c.passed() ? " PASS" : " FAIL") << "\n";
  }
  out << "suite " << (r.passed() ? "PASS" : "FAIL") << " in " << r.seconds << " s\n";
  return r.passed() ? kExitOk : kExitUsage;
}

struct TrainArgs {
  std::string config = "default";
  std::string data;
  std::size_t synthetic = 0;
  std::string val;
  std::string out = "run";
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  train::TrainConfig cfg = train::load_config(a.config);
  cfg.seed = detail::resolve_seed(a.seed, cfg.seed);
  if (a.data.empty() == (a.synthetic == 0)) {
    throw ValidationError("train: give exactly one of --data or --synthetic");
  }
  frontend::Dataset train_set, val_set;
  if (a.synthetic) {
    train_set = frontend::synth_dataset(a.synthetic, cfg.synthetic_noise, cfg.seed, cfg.synthetic);
    if (a.val.empty()) {
      val_set = frontend::synth_dataset(a.synthetic, cfg.synthetic_noise, cfg.seed + 1, cfg.synthetic);
    }
  } else {
    train_set = frontend::load_dataset(a.data, cfg.mel);
  }
  if (!a.val.empty()) val_set = frontend::load_dataset(a.val, cfg.mel);

  const fs::path dir(a.out);
  std::vector<fs::path> outputs{dir / "final.ckpt", dir / "best.ckpt", dir / "metrics.csv",
                                dir / "config.txt"};
  if (cfg.strategy == mtl::Strategy::pretrain) {
    outputs.push_back(dir / "phase1_end.ckpt");
    outputs.push_back(dir / "phase2_start.ckpt");
  }
  detail::require_absent(outputs, a.force);
  fs::create_directories(dir);

  train::TrainOptions opt;
  opt.threads = a.threads;
  if (!a.quiet) {
    out << train::MetricsLog::kHeader << "\n";
    opt.on_epoch = [&](const train::EpochRecord& r) { out << train::MetricsLog::csv_row(r) << "\n" << std::flush; };
  }
  try {
    const auto r = train::train(cfg, train_set, val_set.empty() ? nullptr : &val_set, opt);
    train::save_checkpoint(r.final_checkpoint, dir / "final.ckpt");
    train::save_checkpoint(r.best_checkpoint, dir / "best.ckpt");
    if (r.phase1_end) train::save_checkpoint(*r.phase1_end, dir / "phase1_end.ckpt");
    if (r.phase2_start) train::save_checkpoint(*r.phase2_start, dir / "phase2_start.ckpt");
    detail::write_text(dir / "metrics.csv", r.log.csv());
    detail::write_text(dir / "config.txt", train::to_text(cfg));
    out << "epochs " << r.epochs_run << (r.early_stopped ? " (early stop)" : "") << ", best epoch "
        << r.best_epoch << ", checkpoints in " << dir.string() << "\n";
  } catch (const train::DivergenceError& e) {
    train::save_checkpoint(e.last_good(), dir / "last_good.ckpt");
    err << "error: " << e.what() << "; last good checkpoint written to "
        << (dir / "last_good.ckpt").string() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::size_t synthetic = 0;
  std::optional<std::uint64_t> seed;
  std::optional<double> fusion_beta;
  std::string out = "eval";
  bool force = false;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  auto lm = train::load_model(train::load_checkpoint(a.ckpt));
  for (const auto& w : lm.warnings) err << "warning: " << w << "\n";
  if (a.data.empty() == (a.synthetic == 0)) {
    throw ValidationError("eval: give exactly one of --data or --synthetic");
  }
  const frontend::Dataset ds =
      a.synthetic ? frontend::synth_dataset(a.synthetic, lm.config.synthetic_noise,
                                            detail::resolve_seed(a.seed, lm.config.seed + 1),
                                            lm.config.synthetic)
                  : frontend::load_dataset(a.data, lm.config.mel);
  mtl::FusionConfig fusion = lm.config.fusion;
  if (a.fusion_beta) fusion = {true, *a.fusion_beta};
  const fs::path dir(a.out);
  const std::vector<fs::path> outputs{dir / "summary.csv", dir / "confusion10.csv",
                                      dir / "confusion3.csv"};
  detail::require_absent(outputs, a.force);
  const auto r = train::evaluate(lm.model, ds, fusion);
  out << train::format_report(r);
  std::string summary = "examples,acc10,acc3,fusion_beta\n" + std::to_string(r.count) + "," +
                        frontend::format_double(r.acc10) + "," + frontend::format_double(r.acc3) +
                        "," + (fusion.enabled ? frontend::format_double(fusion.beta) : "") + "\n";
  train::write_files({{outputs[0], summary},
                      {outputs[1], detail::confusion_csv(r.confusion10, mtl::kSceneNames)},
                      {outputs[2], detail::confusion_csv(r.confusion3, mtl::kAbstractNames)}},
                     true);
  return kExitOk;
}

struct FeatmapArgs {
  std::string ckpt;
  std::string input;
  std::string synthetic_class;
  std::size_t block = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

inline int cmd_featmap(const FeatmapArgs& a, std::ostream& out, std::ostream& err) {
  auto lm = train::load_model(train::load_checkpoint(a.ckpt));
  for (const auto& w : lm.warnings) err << "warning: " << w << "\n";
  if (a.input.empty() == a.synthetic_class.empty()) {
    throw ValidationError("featmap: give exactly one of --input or --synthetic-class");
  }
  FeatureMap x;
  if (!a.input.empty()) {
    x = frontend::melspectrogram(frontend::load_wav(a.input, lm.config.mel.sample_rate), lm.config.mel);
  } else {
    const mtl::Scene scene = mtl::parse_scene(a.synthetic_class);
    const auto ds = frontend::synth_dataset(1, lm.config.synthetic_noise,
                                            detail::resolve_seed(a.seed, lm.config.seed),
                                            lm.config.synthetic);
    x = ds[mtl::index_of(scene)].features;
  }
  const auto taps = train::block_taps(lm.model, x, a.block);
  const auto files = train::tap_files(taps, a.block, a.out);
  train::write_files(files, a.force);
  const std::size_t channels = taps.a.dim(1);
  out << "block " << a.block << ": " << channels << " channels, " << 3 * channels
      << " csv grids and " << 3 * channels << " pgm images written to " << a.out << "\n";
  return kExitOk;
}

inline int cmd_params(const std::string& config, std::ostream& out) {
  const auto cfg = train::load_config(config);
  const std::size_t total = train::count_params(cfg.architecture, cfg.strategy);
  out << total << "\n";
  for (const auto& s : train::param_breakdown(cfg.architecture, cfg.strategy)) {
    out << "  " << s.name << " " << s.params << "\n";
  }
  return kExitOk;
}

struct SynthArgs {
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  double noise = 0.1;
  bool force = false;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const std::uint64_t seed = detail::resolve_seed(a.seed, 0);
  const auto ds = frontend::synth_dataset(a.n, a.noise, seed);
  const fs::path dir(a.out);
  std::vector<train::TapFile> files;
  std::vector<frontend::ManifestRow> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& ex = ds[i];
    const std::string name = std::string(mtl::to_string(ex.scene)) + "_" +
                             std::to_string(i % a.n) + ".csv";
    const Dims4 d = dims4(ex.features);
    files.push_back({dir / name, frontend::grid_csv(ex.features.reshaped({d.time, d.freq}))});
    rows.push_back({name, ex.scene});
  }
  files.push_back({dir / "manifest.csv", frontend::manifest_csv(rows)});
  train::write_files(files, a.force);
  out << ds.size() << " examples and manifest.csv written to " << dir.string() << "\n";
  return kExitOk;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"AMFM acoustic scene classification: training, evaluation, verification"};
  app.name("amfm");
  app.require_subcommand(1);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--tolerance", ga.tolerance, "Override every case's relative-error bound")
      ->check(CLI::PositiveNumber);
  gc->add_option("--points", ga.points, "Random points per case")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoints and metrics");
  tr->add_option("--config", ta.config, "Run config file, or 'default'")->required();
  auto* data_opt = tr->add_option("--data", ta.data, "Training manifest (path,scene_label)");
  tr->add_option("--synthetic", ta.synthetic, "Synthetic examples per class instead of --data")
      ->excludes(data_opt)
      ->check(CLI::PositiveNumber);
  tr->add_option("--val", ta.val, "Validation manifest");
  tr->add_option("--out", ta.out, "Output directory");
  tr->add_option("--threads", ta.threads, "Data-parallel shards per batch")->check(CLI::PositiveNumber);
  tr->add_option("--seed", ta.seed, "Seed (overrides AMFM_SEED and the config)");
  tr->add_flag("--force", ta.force, "Overwrite existing outputs");
  tr->add_flag("--quiet", ta.quiet, "Do not print per-epoch metrics");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
  auto* edata = ev->add_option("--data", ea.data, "Evaluation manifest");
  ev->add_option("--synthetic", ea.synthetic, "Synthetic examples per class instead of --data")
      ->excludes(edata)
      ->check(CLI::PositiveNumber);
  ev->add_option("--seed", ea.seed, "Seed for --synthetic");
  ev->add_option("--fusion-beta", ea.fusion_beta, "Enable joint prediction with this exponent")
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--out", ea.out, "Directory for the CSV reports");
  ev->add_flag("--force", ea.force, "Overwrite existing outputs");

  FeatmapArgs fa;
  auto* fm = app.add_subcommand("featmap", "Export block taps (a), (b), (c) as CSV and PGM");
  fm->add_option("--ckpt", fa.ckpt, "Checkpoint file")->required();
  auto* fin = fm->add_option("--input", fa.input, "WAV clip");
  fm->add_option("--synthetic-class", fa.synthetic_class, "Scene name for a synthetic input")
      ->excludes(fin);
  fm->add_option("--block", fa.block, "Block index (0-based)")->required();
  fm->add_option("--out", fa.out, "Output directory")->required();
  fm->add_option("--seed", fa.seed, "Seed for --synthetic-class");
  fm->add_flag("--force", fa.force, "Overwrite existing outputs");

  std::string params_config;
  auto* pc = app.add_subcommand("params", "Count trainable parameters");
  pc->add_option("--config", params_config, "Run config file, or 'default'")->required();

  SynthArgs sa;
  auto* sd = app.add_subcommand("synth-data", "Write a synthetic dataset and manifest");
  sd->add_option("--n", sa.n, "Examples per class")->required()->check(CLI::PositiveNumber);
  sd->add_option("--seed", sa.seed, "Seed (overrides AMFM_SEED)");
  sd->add_option("--out", sa.out, "Output directory")->required();
  sd->add_option("--noise", sa.noise, "Noise level")->check(CLI::NonNegativeNumber);
  sd->add_flag("--force", sa.force, "Overwrite existing outputs");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(ga, out);
    if (tr->parsed()) return cmd_train(ta, out, err);
    if (ev->parsed()) return cmd_eval(ea, out, err);
    if (fm->parsed()) return cmd_featmap(fa, out, err);
    if (pc->parsed()) return cmd_params(params_config, out);
    if (sd->parsed()) return cmd_synth(sa, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace amfm::cli
