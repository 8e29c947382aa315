#pragma once

// Labelled examples, plain-text feature grids, and the `path,scene_label`
// manifest format.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "amfm/core/tensor.hpp"
#include "amfm/frontend/spectrogram.hpp"
#include "amfm/multitask/taxonomy.hpp"

namespace amfm::frontend {

struct Example {
  FeatureMap features;  // [1, 1, T, F]
  mtl::Scene scene = mtl::Scene::airport;
  std::string source;

  mtl::Abstract abstract() const { return mtl::parent_of(scene); }
  mtl::LabelPair label() const { return mtl::LabelPair::one_hot(scene); }
};

using Dataset = std::vector<Example>;

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ValidationError("format_double failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(sep, start);
    out.push_back(line.substr(start, p == std::string_view::npos ? p : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

/// One row per time frame, one column per frequency bin.
inline std::string grid_csv(const Tensor& plane) {
  if (plane.rank() != 2) throw ShapeError("grid_csv: expected a rank-2 grid");
  std::string s;
  for (std::size_t r = 0; r < plane.dim(0); ++r) {
    for (std::size_t c = 0; c < plane.dim(1); ++c) {
      if (c) s += ',';
      s += format_double(plane.at(r, c));
    }
    s += '\n';
  }
  return s;
}

inline Tensor read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line, ',');
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols) {
      throw ParseError(path.string() + ": ragged row " + std::to_string(rows + 1));
    }
    for (auto c : cells) values.push_back(parse_double(c));
    ++rows;
  }
  if (rows == 0) throw ParseError(path.string() + ": empty grid");
  return Tensor({rows, cols}, std::move(values));
}

struct ManifestRow {
  std::string path;
  mtl::Scene scene;
};

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 2) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected 'path,scene_label'");
    }
    if (lineno == 1 && cells[0] == "path" && cells[1] == "scene_label") continue;
    rows.push_back({std::string(cells[0]), mtl::parse_scene(cells[1])});
  }
  return rows;
}

inline std::string manifest_csv(const std::vector<ManifestRow>& rows) {
  std::string s = "path,scene_label\n";
  for (const auto& r : rows) {
    s += r.path;
    s += ',';
    s += mtl::to_string(r.scene);
    s += '\n';
  }
  return s;
}

/// Loads every manifest entry: `.wav` files go through the mel frontend,
/// `.csv` files are read as ready-made T x F feature grids. Relative paths
/// resolve against the manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest,
                            const MelConfig& mel) {
  Dataset ds;
  const auto base = manifest.parent_path();
  for (const auto& row : read_manifest(manifest)) {
    std::filesystem::path p(row.path);
    if (p.is_relative()) p = base / p;
    Example ex;
    ex.scene = row.scene;
    ex.source = row.path;
    if (p.extension() == ".wav") {
      ex.features = melspectrogram(load_wav(p, mel.sample_rate), mel);
    } else {
      Tensor grid = read_grid_csv(p);
      const std::size_t t = grid.dim(0), f = grid.dim(1);
      ex.features = std::move(grid).reshaped({1, 1, t, f});
    }
    ds.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace amfm::frontend
