#pragma once

// Run configuration and its text form: `key = value` lines, `[section]`
// headers, `#` comments. Serialisation is canonical, so the text of a parsed
// config re-serialises identically.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "amfm/block/attention.hpp"
#include "amfm/core/layers.hpp"
#include "amfm/frontend/augment.hpp"
#include "amfm/frontend/dataset.hpp"
#include "amfm/frontend/spectrogram.hpp"
#include "amfm/frontend/synth.hpp"
#include "amfm/multitask/head.hpp"
#include "amfm/multitask/objectives.hpp"

namespace amfm::train {

struct ArchitectureConfig {
  std::vector<std::size_t> widths{32, 64, 96, 128};
  std::size_t input_channels = 1;
  nn::Pair pool{2, 2};
  block::CbamConfig cbam;
  std::size_t head_hidden = mtl::kTaskHidden;
  bool detach_sequential = false;
};

struct TrainConfig {
  mtl::Strategy strategy = mtl::Strategy::extended_mtl;
  mtl::LossWeights loss_weights{1.0, 5.0};
  double lr_max = 0.001;
  double lr_min = 1e-5;
  double momentum = 0.9;
  std::size_t batch_size = 24;
  std::size_t epochs = 800;
  double restart_period = 100;
  double restart_mult = 1.0;
  std::uint64_t seed = 0;
  bool gradnorm_enabled = false;
  mtl::GradNormConfig gradnorm;
  mtl::FusionConfig fusion;
  double pretrain_split = 0.25;
  /// Stop once every emitted task reaches this train accuracy (0 disables).
  double early_stop_train_acc = 0.0;
  ArchitectureConfig architecture;
  frontend::AugmentPolicy augment;
  frontend::MelConfig mel;
  frontend::SynthConfig synthetic;
  double synthetic_noise = 0.1;

  void validate() const {
    loss_weights.validate();
    if (!(lr_min < lr_max)) throw ValidationError("config: lr_min must be below lr_max");
    if (!(lr_min >= 0.0)) throw ValidationError("config: lr_min must be non-negative");
    if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ValidationError("config: momentum must lie in [0,1)");
    }
    if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (!(restart_period > 0.0) || !(restart_mult >= 1.0)) {
      throw ValidationError("config: restart_period > 0 and restart_mult >= 1 required");
    }
    if (architecture.widths.empty()) {
      throw ValidationError("config: architecture needs at least one block");
    }
    for (auto w : architecture.widths) {
      if (w == 0) throw ValidationError("config: block widths must be positive");
    }
    if (architecture.cbam.spatial_kernel % 2 == 0) {
      throw ValidationError("config: spatial_kernel must be odd");
    }
    augment.validate();
    if (strategy == mtl::Strategy::pretrain) (void)mtl::pretrain_schedule(epochs, pretrain_split);
  }
};

/// Flat `section.key -> value` view of a config file.
class ConfigText {
 public:
  static ConfigText parse(std::string_view text) {
    ConfigText c;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string s = trim(line);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ParseError("config line " + std::to_string(lineno) + ": bad section header");
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
      }
      std::string key = trim(s.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      if (c.values_.count(key)) throw ParseError("config: duplicate key '" + key + "'");
      c.values_[key] = trim(s.substr(eq + 1));
    }
    return c;
  }

  /// Removes and returns a key, or nullptr-equivalent empty optional.
  bool take(const std::string& key, std::string& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return false;
    out = it->second;
    values_.erase(it);
    return true;
  }

  void require_consumed() const {
    if (!values_.empty()) {
      throw ValidationError("config: unknown key '" + values_.begin()->first + "'");
    }
  }

 private:
  static std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
  }

  std::map<std::string, std::string> values_;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ParseError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (auto part : frontend::split(v, ',')) {
    std::string s(part);
    s.erase(0, s.find_first_not_of(' '));
    s.erase(s.find_last_not_of(' ') + 1);
    out.push_back(static_cast<std::size_t>(parse_uint(key, s)));
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

// Binds every config field to a key once, for reading and for writing.
template <typename Visitor>
void visit_fields(TrainConfig& c, Visitor&& v) {
  std::string strategy(mtl::to_string(c.strategy));
  v.text("", "strategy", strategy, [&](const std::string& s) { c.strategy = mtl::parse_strategy(s); });
  v.uint("", "seed", c.seed);
  v.size("", "epochs", c.epochs);
  v.size("", "batch_size", c.batch_size);
  v.real("", "lr_max", c.lr_max);
  v.real("", "lr_min", c.lr_min);
  v.real("", "momentum", c.momentum);
  v.real("", "restart_period", c.restart_period);
  v.real("", "restart_mult", c.restart_mult);
  v.real("", "pretrain_split", c.pretrain_split);
  v.real("", "early_stop_train_acc", c.early_stop_train_acc);

  v.real("loss_weights", "w3", c.loss_weights.w3);
  v.real("loss_weights", "w10", c.loss_weights.w10);

  v.flag("gradnorm", "enabled", c.gradnorm_enabled);
  v.real("gradnorm", "alpha", c.gradnorm.alpha);
  v.real("gradnorm", "lr", c.gradnorm.lr);

  v.flag("fusion", "enabled", c.fusion.enabled);
  v.real("fusion", "beta", c.fusion.beta);

  auto& a = c.architecture;
  v.list("architecture", "widths", a.widths);
  v.size("architecture", "input_channels", a.input_channels);
  std::vector<std::size_t> pool{a.pool[0], a.pool[1]};
  v.list("architecture", "pool", pool);
  if (pool.size() != 2) throw ParseError("config: architecture.pool expects two values");
  a.pool = {pool[0], pool[1]};
  v.size("architecture", "cbam_reduction", a.cbam.reduction);
  v.size("architecture", "spatial_kernel", a.cbam.spatial_kernel);
  v.size("architecture", "head_hidden", a.head_hidden);
  v.flag("architecture", "detach_sequential", a.detach_sequential);

  auto& g = c.augment;
  v.flag("augment", "mixup", g.mixup_enabled);
  v.real("augment", "mixup_alpha", g.mixup_alpha);
  v.flag("augment", "spec_augment", g.spec_augment_enabled);
  v.size("augment", "freq_masks", g.n_freq_masks);
  v.size("augment", "freq_mask_max", g.freq_mask_max);
  v.size("augment", "time_masks", g.n_time_masks);
  v.size("augment", "time_mask_max", g.time_mask_max);

  auto& m = c.mel;
  std::size_t rate = m.sample_rate;
  v.size("mel", "sample_rate", rate);
  m.sample_rate = static_cast<unsigned>(rate);
  v.size("mel", "n_fft", m.n_fft);
  v.size("mel", "win_length", m.win_length);
  v.size("mel", "hop_length", m.hop_length);
  v.size("mel", "n_mels", m.n_mels);
  v.real("mel", "fmin", m.fmin);
  v.real("mel", "fmax", m.fmax);
  v.real("mel", "power", m.power);

  v.size("synthetic", "time", c.synthetic.time);
  v.size("synthetic", "mel", c.synthetic.mel);
  v.uint("synthetic", "template_seed", c.synthetic.template_seed);
  v.real("synthetic", "noise_level", c.synthetic_noise);
}

struct Reader {
  ConfigText& src;
  static std::string key(const char* sec, const char* k) {
    return *sec ? std::string(sec) + "." + k : std::string(k);
  }
  template <typename Set>
  void text(const char* sec, const char* k, std::string&, Set set) {
    std::string s;
    if (src.take(key(sec, k), s)) set(s);
  }
  void uint(const char* sec, const char* k, std::uint64_t& out) {
    std::string s;
    if (src.take(key(sec, k), s)) out = parse_uint(key(sec, k), s);
  }
  void size(const char* sec, const char* k, std::size_t& out) {
    std::string s;
    if (src.take(key(sec, k), s)) out = static_cast<std::size_t>(parse_uint(key(sec, k), s));
  }
  void real(const char* sec, const char* k, double& out) {
    std::string s;
    if (src.take(key(sec, k), s)) out = frontend::parse_double(s);
  }
  void flag(const char* sec, const char* k, bool& out) {
    std::string s;
    if (src.take(key(sec, k), s)) out = parse_bool(key(sec, k), s);
  }
  void list(const char* sec, const char* k, std::vector<std::size_t>& out) {
    std::string s;
    if (src.take(key(sec, k), s)) out = parse_list(key(sec, k), s);
  }
};

struct Writer {
  std::string out;
  std::string section;
  void line(const char* sec, const char* k, const std::string& v) {
    if (section != sec) {
      section = sec;
      out += "\n[" + section + "]\n";
    }
    out += std::string(k) + " = " + v + "\n";
  }
  template <typename Set>
  void text(const char* sec, const char* k, std::string& v, Set) { line(sec, k, v); }
  void uint(const char* sec, const char* k, std::uint64_t& v) { line(sec, k, std::to_string(v)); }
  void size(const char* sec, const char* k, std::size_t& v) { line(sec, k, std::to_string(v)); }
  void real(const char* sec, const char* k, double& v) { line(sec, k, frontend::format_double(v)); }
  void flag(const char* sec, const char* k, bool& v) { line(sec, k, v ? "true" : "false"); }
  void list(const char* sec, const char* k, std::vector<std::size_t>& v) { line(sec, k, join(v)); }
};

}  // namespace detail

inline std::string to_text(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  detail::Writer w;
  w.out = "# amfm run config\n";
  detail::visit_fields(copy, w);
  return w.out;
}

inline TrainConfig parse_config(std::string_view text) {
  ConfigText src = ConfigText::parse(text);
  TrainConfig cfg;
  detail::Reader r{src};
  detail::visit_fields(cfg, r);
  src.require_consumed();
  cfg.validate();
  return cfg;
}

/// Reads a config file; the name `default` yields the built-in defaults.
inline TrainConfig load_config(const std::string& path) {
  if (path == "default") return TrainConfig{};
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace amfm::train
