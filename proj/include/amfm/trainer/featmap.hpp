#pragma once

// Block tap export: one CSV grid (T rows x F columns) and one 8-bit PGM per
// tap channel, plus a sidecar listing each image's min/max scale.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "amfm/frontend/dataset.hpp"
#include "amfm/trainer/model.hpp"

namespace amfm::train {

/// Taps of block `index` for a single input example, inference mode.
inline block::BlockTaps block_taps(const ModelGraph& m, const Tensor& x, std::size_t index) {
  if (index >= m.blocks.size()) {
    throw ValidationError("block index " + std::to_string(index) + " out of range (model has " +
                          std::to_string(m.blocks.size()) + " blocks)");
  }
  Tensor cur = x;
  for (std::size_t i = 0;; ++i) {
    auto f = block::amfm_block_forward(cur, m.blocks[i], nn::Mode::infer);
    if (i == index) return std::move(f.taps);
    cur = std::move(f.out);
  }
}

/// Binary PGM (P5), width F and height T, min-max scaled to 0..255.
inline std::string pgm_image(const Tensor& plane, double lo, double hi) {
  const std::size_t rows = plane.dim(0), cols = plane.dim(1);
  std::string s = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  const double span = hi - lo;
  for (double v : plane.data()) {
    const double u = span > 0.0 ? (v - lo) / span : 0.0;
    s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
  }
  return s;
}

struct TapFile {
  std::filesystem::path path;
  std::string contents;
};

inline std::string tap_stem(char tag, std::size_t block, std::size_t channel) {
  return std::string(1, tag) + "_" + std::to_string(block) + "_" + std::to_string(channel);
}

/// Files for taps of batch item 0: `<tag>_<block>_<channel>.{csv,pgm}` and
/// `scales_<block>.txt`.
inline std::vector<TapFile> tap_files(const block::BlockTaps& taps, std::size_t block,
                                      const std::filesystem::path& dir) {
  const Dims4 d = dims4(taps.a, "tap");
  std::vector<TapFile> files;
  std::string scales = "tag block channel min max\n";
  const std::pair<char, const Tensor*> named[] = {{'a', &taps.a}, {'b', &taps.b}, {'c', &taps.c}};
  for (const auto& [tag, t] : named) {
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      Tensor plane({d.time, d.freq});
      std::copy_n(&t->at(0, ch, 0, 0), d.plane(), plane.data().begin());
      const auto [lo, hi] = std::minmax_element(plane.data().begin(), plane.data().end());
      const std::string stem = tap_stem(tag, block, ch);
      files.push_back({dir / (stem + ".csv"), frontend::grid_csv(plane)});
      files.push_back({dir / (stem + ".pgm"), pgm_image(plane, *lo, *hi)});
      scales += std::string(1, tag) + " " + std::to_string(block) + " " + std::to_string(ch) +
                " " + frontend::format_double(*lo) + " " + frontend::format_double(*hi) + "\n";
    }
  }
  files.push_back({dir / ("scales_" + std::to_string(block) + ".txt"), scales});
  return files;
}

/// Writes all files or none: existing targets abort unless `force`.
inline void write_files(const std::vector<TapFile>& files, bool force) {
  if (!force) {
    for (const auto& f : files) {
      if (std::filesystem::exists(f.path)) {
        throw ValidationError(f.path.string() + " exists (use --force to overwrite)");
      }
    }
  }
  for (const auto& f : files) {
    if (f.path.has_parent_path()) std::filesystem::create_directories(f.path.parent_path());
    std::filesystem::path tmp = f.path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + tmp.string());
      out.write(f.contents.data(), static_cast<std::streamsize>(f.contents.size()));
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, f.path);
  }
}

}  // namespace amfm::train
