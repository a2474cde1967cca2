#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "propenc/errors.hpp"
#include "propenc/tensor.hpp"

namespace propenc {

// Row-wise softmax with max subtraction. Rows of the result sum to 1.
inline Tensor softmax_rows(const Tensor& m) {
  m.require_rank(2, "softmax_rows");
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

// Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias.
// Variance is the biased (1/n) estimate.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps) {
  x.require_rank(2, "layer_norm");
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias length must equal row width");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c)
      row[c] = (row[c] - mean) * inv * gain.at(c) + bias.at(c);
  }
  return out;
}

constexpr double kLayerNormEps = 1e-5;

// Central-difference gradient of a scalar function over a flat parameter
// vector. This is the verification oracle for every analytic gradient in the
// project and must stay independent of any backprop machinery.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double step) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double fp = f(p);
    p[i] = saved - step;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_gradient: non-finite function value");
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// Max relative error between two gradients, with an absolute floor so that
// near-zero coordinates do not blow up the ratio.
inline double max_rel_error(std::span<const double> a,
                            std::span<const double> b,
                            double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace propenc
