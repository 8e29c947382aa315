#pragma once

// Binary checkpoint: magic "AMFM", u32 version, u64 epoch, the canonical run
// config text, the RNG engine state, then named f64 tensors. All integers and
// values are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "amfm/trainer/config.hpp"
#include "amfm/trainer/model.hpp"

namespace amfm::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "AMFM";

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ShapeTableError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t epoch = 0;
  std::string config_text;
  std::string rng_state;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t.value;
    }
    return nullptr;
  }

  TrainConfig config() const { return parse_config(config_text); }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    if (a.version != b.version || a.epoch != b.epoch || a.config_text != b.config_text ||
        a.rng_state != b.rng_state || a.tensors.size() != b.tensors.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      if (a.tensors[i].name != b.tensors[i].name || !(a.tensors[i].value == b.tensors[i].value)) {
        return false;
      }
    }
    return true;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) {
      throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kMaxRank = 8;

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(c.version);
  w.u64(c.epoch);
  w.str(c.config_text);
  w.str(c.rng_state);
  w.u64(c.tensors.size());
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) w.u64(e);
    for (double v : t.value.data()) w.f64(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError("not an AMFM checkpoint (bad magic)");
  }
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(c.version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  c.epoch = r.u64();
  c.config_text = r.str();
  c.rng_state = r.str();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > detail::kMaxRank) {
      throw ShapeTableError("tensor '" + t.name + "' has invalid rank " + std::to_string(rank));
    }
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t e = r.u64();
      if (e == 0 || e > (std::uint64_t{1} << 32)) {
        throw ShapeTableError("tensor '" + t.name + "' has invalid extent " + std::to_string(e));
      }
      n *= e;
      if (n > r.remaining() / 8 + 1) {
        throw CheckpointTruncatedError("tensor '" + t.name + "' extends past end of checkpoint");
      }
      shape.push_back(static_cast<std::size_t>(e));
    }
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = r.f64();
    t.value = Tensor(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

/// Writes to a sibling temp file, then renames over the target.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(c);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename Engine>
std::string engine_state(const Engine& e) {
  std::ostringstream ss;
  ss << e;
  return ss.str();
}

template <typename Engine>
void restore_engine(Engine& e, const std::string& state) {
  std::istringstream ss(state);
  ss >> e;
  if (!ss) throw CheckpointError("checkpoint RNG state is unreadable");
}

namespace detail {
inline std::string bn_name(std::size_t block, std::string_view what) {
  return "block" + std::to_string(block) + ".bn_" + std::string(what);
}
inline bool is_head(std::string_view name) { return name.starts_with("head."); }
}  // namespace detail

template <typename Engine>
Checkpoint capture(const ModelGraph& m, const TrainConfig& cfg, std::uint64_t epoch,
                   const Engine& rng) {
  Checkpoint c;
  c.epoch = epoch;
  c.config_text = to_text(cfg);
  c.rng_state = engine_state(rng);
  for (const Param* p : m.params()) {
    c.tensors.push_back({p->name + ".value", p->value});
    c.tensors.push_back({p->name + ".velocity", p->velocity});
  }
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& s = m.blocks[i].bn_stats;
    c.tensors.push_back({detail::bn_name(i, "running_mean"), s.mean});
    c.tensors.push_back({detail::bn_name(i, "running_var"), s.var});
    c.tensors.push_back({detail::bn_name(i, "populated"), Tensor({1}, s.populated ? 1.0 : 0.0)});
  }
  return c;
}

/// Loads checkpoint tensors into `m`. Head slots that are missing or shaped
/// differently keep their current values and produce a warning; any trunk
/// mismatch is an error.
inline std::vector<std::string> restore(ModelGraph& m, const Checkpoint& c) {
  std::map<std::string, const Tensor*> table;
  for (const auto& t : c.tensors) {
    if (!table.emplace(t.name, &t.value).second) {
      throw ShapeTableError("duplicate tensor '" + t.name + "' in checkpoint");
    }
  }
  std::vector<std::string> warnings;
  std::map<std::string, bool> used;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor* {
    auto it = table.find(name);
    const bool head = detail::is_head(name);
    if (it == table.end()) {
      if (head) {
        warnings.push_back(name + ": not in checkpoint, keeping current values");
        return nullptr;
      }
      throw ShapeTableError("checkpoint lacks trunk tensor '" + name + "'");
    }
    used[name] = true;
    if (it->second->shape() != shape) {
      const std::string msg = name + ": checkpoint shape " + shape_str(it->second->shape()) +
                              " vs model " + shape_str(shape);
      if (head) {
        warnings.push_back(msg + ", keeping current values");
        return nullptr;
      }
      throw ShapeTableError(msg);
    }
    return it->second;
  };
  // Resolve everything before mutating so a failed restore leaves m intact.
  std::vector<std::pair<Tensor*, const Tensor*>> plan;
  for (Param* p : m.params()) {
    const Tensor* v = fetch(p->name + ".value", p->value.shape());
    const Tensor* vel = fetch(p->name + ".velocity", p->value.shape());
    if (v) plan.emplace_back(&p->value, v);
    if (vel) plan.emplace_back(&p->velocity, vel);
  }
  std::vector<const Tensor*> populated;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& s = m.blocks[i].bn_stats;
    plan.emplace_back(&s.mean, fetch(detail::bn_name(i, "running_mean"), s.mean.shape()));
    plan.emplace_back(&s.var, fetch(detail::bn_name(i, "running_var"), s.var.shape()));
    populated.push_back(fetch(detail::bn_name(i, "populated"), Shape{1}));
  }
  for (const auto& [name, t] : table) {
    if (used.count(name)) continue;
    if (!detail::is_head(name)) throw ShapeTableError("unexpected trunk tensor '" + name + "'");
    warnings.push_back(name + ": not used by this head, ignored");
  }
  for (auto& [dst, src] : plan) *dst = *src;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    m.blocks[i].bn_stats.populated = (*populated[i])[0] != 0.0;
  }
  for (Param* p : m.params()) p->zero_grad();
  return warnings;
}

struct LoadedModel {
  TrainConfig config;
  ModelGraph model;
  std::vector<std::string> warnings;
};

/// Rebuilds the model described by the checkpoint's own config.
inline LoadedModel load_model(const Checkpoint& c) {
  LoadedModel lm;
  lm.config = c.config();
  std::mt19937_64 rng(lm.config.seed);
  lm.model = ModelGraph::make(lm.config.architecture, lm.config.strategy, rng);
  lm.warnings = restore(lm.model, c);
  return lm;
}

}  // namespace amfm::train
