#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "propenc/errors.hpp"

namespace propenc {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 and 2 cover
// the whole computation graph; index storage downcasts to f32 separately.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw ShapeError("tensor data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor vec(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  static Tensor mat(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require_rank(2, "rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2, "cols");
    return shape_[1];
  }

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  std::span<double> row(std::size_t r) {
    require_rank(2, "row");
    return {data_.data() + r * shape_[1], shape_[1]};
  }
  std::span<const double> row(std::size_t r) const {
    require_rank(2, "row");
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data_[0];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void require_rank(std::size_t r, const char* what) const {
    if (shape_.size() != r)
      throw ShapeError(std::string(what) + ": expected rank " +
                       std::to_string(r) + ", got rank " +
                       std::to_string(shape_.size()));
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace propenc
