#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "amfm/core/tensor.hpp"

namespace amfm::nn {

inline constexpr double kFiniteDifferenceStep = 1e-5;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares an analytic gradient of a scalar function against central
/// differences, coordinate by coordinate. The relative error per coordinate
/// is |a - n| / max(|a|, |n|, 1e-8).
inline GradcheckResult gradcheck(const std::function<double(const Tensor&)>& f,
                                 const Tensor& analytic, Tensor point,
                                 double eps = kFiniteDifferenceStep) {
  point.require_same_shape(analytic, "gradcheck");
  GradcheckResult r;
  r.coordinates = point.size();
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + eps;
    const double fp = f(point);
    point[i] = orig - eps;
    const double fm = f(point);
    point[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
      throw NumericError("gradcheck: non-finite value at coordinate " +
                         std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

/// Fixed random weights r so that sum(r * y) turns any tensor-valued
/// operation into a scalar; its gradient with respect to y is r itself.
/// After `center(y0)` the scalar is sum(r * (y - y0)), accumulated in long
/// double: same gradient, but finite differences no longer cancel a large
/// constant term.
class RandomProjection {
 public:
  RandomProjection(const Shape& shape, std::uint64_t seed) : weights_(shape) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : weights_.data()) v = dist(rng);
  }

  void center(const Tensor& y0) {
    weights_.require_same_shape(y0, "RandomProjection::center");
    baseline_ = y0;
  }

  double operator()(const Tensor& y) const {
    weights_.require_same_shape(y, "RandomProjection");
    long double s = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double v = baseline_.empty() ? y[i] : y[i] - baseline_[i];
      s += static_cast<long double>(weights_[i]) * v;
    }
    return static_cast<double>(s);
  }

  const Tensor& gradient() const { return weights_; }

 private:
  Tensor weights_;
  Tensor baseline_;
};

template <typename Rng>
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace amfm::nn
