#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "amfm/frontend/dataset.hpp"
#include "amfm/multitask/objectives.hpp"
#include "amfm/trainer/model.hpp"

namespace amfm::train {

struct EvalReport {
  std::size_t count = 0;
  double acc10 = 0.0;
  double acc3 = 0.0;
  std::size_t fusion_fallbacks = 0;
  /// Rows are true labels, columns predictions.
  std::array<std::array<std::size_t, mtl::kNumScenes>, mtl::kNumScenes> confusion10{};
  std::array<std::array<std::size_t, mtl::kNumAbstract>, mtl::kNumAbstract> confusion3{};
  std::vector<std::size_t> pred10;
  std::vector<std::size_t> pred3;
};

inline std::size_t argmax_row(const Tensor& p, std::size_t row) {
  const std::size_t n = p.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (p.at(row, c) > p.at(row, best)) best = c;
  }
  return best;
}

/// Scores posteriors against labels. With `p3` empty the abstract prediction
/// is the parent of the predicted scene; fusion then does not apply.
inline EvalReport score_predictions(const Tensor& p10, const Tensor& p3,
                                    const std::vector<mtl::Scene>& truth,
                                    const mtl::FusionConfig& fusion = {}) {
  if (p10.rank() != 2 || p10.dim(1) != mtl::kNumScenes || p10.dim(0) != truth.size()) {
    throw ShapeError("score_predictions: p10 must be [N,10] with N labels");
  }
  const bool has3 = !p3.empty();
  Tensor scene_post = p10;
  EvalReport r;
  r.count = truth.size();
  if (has3 && fusion.enabled) {
    auto fused = mtl::joint_prediction(p10, p3, fusion);
    scene_post = std::move(fused.posterior);
    r.fusion_fallbacks = static_cast<std::size_t>(
        std::count(fused.fell_back.begin(), fused.fell_back.end(), true));
  }
  std::size_t hit10 = 0, hit3 = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t t10 = mtl::index_of(truth[i]);
    const std::size_t t3 = mtl::index_of(mtl::parent_of(truth[i]));
    const std::size_t y10 = argmax_row(scene_post, i);
    const std::size_t y3 =
        has3 ? argmax_row(p3, i) : mtl::index_of(mtl::parent_of(mtl::scene_from_index(y10)));
    r.pred10.push_back(y10);
    r.pred3.push_back(y3);
    ++r.confusion10[t10][y10];
    ++r.confusion3[t3][y3];
    hit10 += y10 == t10;
    hit3 += y3 == t3;
  }
  if (r.count) {
    r.acc10 = static_cast<double>(hit10) / static_cast<double>(r.count);
    r.acc3 = static_cast<double>(hit3) / static_cast<double>(r.count);
  }
  return r;
}

struct Posteriors {
  Tensor p10;  // [N,10]
  Tensor p3;   // [N,3], empty for single-task models
};

/// Inference-mode posteriors, computed in batches of examples of equal shape.
inline Posteriors predict(const ModelGraph& m, const frontend::Dataset& ds,
                          std::size_t batch = 64) {
  if (ds.empty()) throw ValidationError("predict: empty dataset");
  Posteriors out{Tensor({ds.size(), mtl::kNumScenes}),
                 m.emits_abstract() ? Tensor({ds.size(), mtl::kNumAbstract}) : Tensor()};
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    const std::size_t end = std::min(ds.size(), start + batch);
    std::vector<const Tensor*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&ds[i].features);
    const auto f = m.forward(stack_batch(xs), nn::Mode::infer);
    const Tensor p10 = nn::softmax(f.head.logits10);
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t c = 0; c < mtl::kNumScenes; ++c) out.p10.at(i, c) = p10.at(i - start, c);
    }
    if (m.emits_abstract()) {
      const Tensor p3 = nn::softmax(f.head.logits3);
      for (std::size_t i = start; i < end; ++i) {
        for (std::size_t c = 0; c < mtl::kNumAbstract; ++c) out.p3.at(i, c) = p3.at(i - start, c);
      }
    }
  }
  return out;
}

inline EvalReport evaluate(const ModelGraph& m, const frontend::Dataset& ds,
                           const mtl::FusionConfig& fusion = {}) {
  const Posteriors p = predict(m, ds);
  std::vector<mtl::Scene> truth;
  for (const auto& ex : ds) truth.push_back(ex.scene);
  return score_predictions(p.p10, p.p3, truth, fusion);
}

/// Confusion matrices and accuracies as plain text.
inline std::string format_report(const EvalReport& r) {
  std::string s = "examples " + std::to_string(r.count) + "\n";
  s += "acc10 " + frontend::format_double(r.acc10) + "\n";
  s += "acc3 " + frontend::format_double(r.acc3) + "\n";
  if (r.fusion_fallbacks) s += "fusion_fallbacks " + std::to_string(r.fusion_fallbacks) + "\n";
  s += "confusion10 (rows true, cols predicted)\n";
  for (std::size_t t = 0; t < mtl::kNumScenes; ++t) {
    s += std::string(mtl::to_string(mtl::scene_from_index(t)));
    for (auto v : r.confusion10[t]) s += " " + std::to_string(v);
    s += "\n";
  }
  s += "confusion3 (rows true, cols predicted)\n";
  for (std::size_t t = 0; t < mtl::kNumAbstract; ++t) {
    s += std::string(mtl::kAbstractNames[t]);
    for (auto v : r.confusion3[t]) s += " " + std::to_string(v);
    s += "\n";
  }
  return s;
}

}  // namespace amfm::train
