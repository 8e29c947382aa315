#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amfm/core/errors.hpp"

namespace amfm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles with an explicit shape.
///
/// A default-constructed tensor is empty (rank 0, no elements) and is only
/// used as a placeholder; every constructed tensor has positive extents.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  /// Rank-4 element access (b, c, t, f).
  double& at(std::size_t b, std::size_t c, std::size_t t, std::size_t f) {
    return data_[((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + f];
  }
  const double& at(std::size_t b, std::size_t c, std::size_t t, std::size_t f) const {
    return data_[((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + f];
  }

  /// Rank-2 element access (row, column).
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const double& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && {
    return Tensor(std::move(shape), std::move(data_));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_str(shape_) +
                       " vs " + shape_str(o.shape_));
    }
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive: " +
                                   shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// A rank-4 tensor read as batch x channels x time x frequency.
using FeatureMap = Tensor;

struct Dims4 {
  std::size_t batch, channels, time, freq;
  std::size_t plane() const { return time * freq; }
};

inline Dims4 dims4(const Tensor& t, const char* what = "feature map") {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be rank 4 [B,C,T,F], got " +
                     shape_str(t.shape()));
  }
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

inline double mean_abs(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return t.empty() ? 0.0 : s / static_cast<double>(t.size());
}

/// Concatenate rank-4 tensors along the batch axis.
inline Tensor stack_batch(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape s = items.front()->shape();
  std::size_t batch = 0;
  for (const Tensor* t : items) {
    if (t->rank() != s.size() ||
        !std::equal(s.begin() + 1, s.end(), t->shape().begin() + 1)) {
      throw ShapeError("stack_batch: mismatched item shape " +
                       shape_str(t->shape()));
    }
    batch += t->dim(0);
  }
  s[0] = batch;
  Tensor out(s);
  std::size_t off = 0;
  for (const Tensor* t : items) {
    std::copy(t->data().begin(), t->data().end(), out.data().begin() + off);
    off += t->size();
  }
  return out;
}

}  // namespace amfm
