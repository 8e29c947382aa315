#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "amfm/core/errors.hpp"

namespace amfm::mtl {

inline constexpr std::size_t kNumScenes = 10;
inline constexpr std::size_t kNumAbstract = 3;

enum class Scene {
  airport,
  shopping_mall,
  metro_station,
  street_pedestrian,
  public_square,
  street_traffic,
  tram,
  bus,
  metro,
  park,
};

enum class Abstract { indoor, outdoor, transportation };

inline constexpr std::array<std::string_view, kNumScenes> kSceneNames{
    "airport",       "shopping_mall",  "metro_station", "street_pedestrian",
    "public_square", "street_traffic", "tram",          "bus",
    "metro",         "park"};

inline constexpr std::array<std::string_view, kNumAbstract> kAbstractNames{
    "indoor", "outdoor", "transportation"};

inline constexpr std::array<Abstract, kNumScenes> kParent{
    Abstract::indoor,         Abstract::indoor,         Abstract::indoor,
    Abstract::outdoor,        Abstract::outdoor,        Abstract::outdoor,
    Abstract::transportation, Abstract::transportation, Abstract::transportation,
    Abstract::outdoor};

constexpr Abstract parent_of(Scene s) {
  return kParent[static_cast<std::size_t>(s)];
}

constexpr std::size_t index_of(Scene s) { return static_cast<std::size_t>(s); }
constexpr std::size_t index_of(Abstract a) { return static_cast<std::size_t>(a); }

inline Scene scene_from_index(std::size_t i) {
  if (i >= kNumScenes) throw ValidationError("scene index out of range");
  return static_cast<Scene>(i);
}

inline std::string_view to_string(Scene s) { return kSceneNames[index_of(s)]; }
inline std::string_view to_string(Abstract a) { return kAbstractNames[index_of(a)]; }

inline Scene parse_scene(std::string_view name) {
  for (std::size_t i = 0; i < kNumScenes; ++i) {
    if (kSceneNames[i] == name) return static_cast<Scene>(i);
  }
  throw ValidationError("unknown scene label '" + std::string(name) + "'");
}

/// A 10-class target and its 3-class parent, both row-stochastic.
struct LabelPair {
  std::array<double, kNumScenes> scene{};
  std::array<double, kNumAbstract> abstract{};

  static LabelPair one_hot(Scene s) {
    LabelPair p;
    p.scene[index_of(s)] = 1.0;
    p.abstract[index_of(parent_of(s))] = 1.0;
    return p;
  }

  /// The 3-class distribution implied by summing scene mass per parent.
  std::array<double, kNumAbstract> marginal_abstract() const {
    std::array<double, kNumAbstract> m{};
    for (std::size_t i = 0; i < kNumScenes; ++i) {
      m[index_of(kParent[i])] += scene[i];
    }
    return m;
  }
};

}  // namespace amfm::mtl
