#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "propenc/errors.hpp"

namespace propenc {

struct LossConfig {
  double temperature = 0.01;
};

struct LossResult {
  double value = 0.0;
  // d loss / d v_i, one flat vector per embedding.
  std::vector<std::vector<double>> embedding_grads;
};

namespace detail {

inline void check_positives(const std::vector<std::vector<double>>& v,
                            const std::vector<std::vector<std::size_t>>& pos) {
  if (v.size() < 2) throw DataError("supcon_loss: need at least 2 embeddings");
  if (pos.size() != v.size())
    throw DataError("supcon_loss: positives map size mismatch");
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t p : pos[i]) {
      if (p >= v.size()) throw DataError("supcon_loss: positive index range");
      if (p == i) throw DataError("supcon_loss: reflexive positive");
      if (std::find(pos[p].begin(), pos[p].end(), i) == pos[p].end())
        throw DataError("supcon_loss: positives map not symmetric");
    }
}

}  // namespace detail

// In-batch supervised contrastive loss over unit-norm embeddings:
//
//   L = sum_{i, P(i) nonempty} (-1/|P(i)|) sum_{p in P(i)}
//         log( exp(v_i.v_p / tau) / sum_{j != i} exp(v_i.v_j / tau) )
//
// Anchors with empty P(i) contribute no outer term but still appear in every
// denominator. The log-sum-exp is computed with per-anchor max subtraction;
// at tau = 0.01 the logits reach 100, so this is not optional.
inline LossResult supcon_loss(const std::vector<std::vector<double>>& v,
                              const std::vector<std::vector<std::size_t>>& positives,
                              double tau) {
  detail::check_positives(v, positives);
  if (tau <= 0.0) throw DataError("supcon_loss: tau must be positive");
  const std::size_t n = v.size();
  const std::size_t d = v[0].size();

  // z[i][j] = v_i . v_j / tau
  std::vector<std::vector<double>> z(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += v[i][c] * v[j][c];
      z[i][j] = s / tau;
    }

  LossResult out;
  out.embedding_grads.assign(n, std::vector<double>(d, 0.0));
  // g[i][j] = d L / d z[i][j] for j != i
  std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));

  // Summands are sorted before reduction so the loss value is bitwise
  // invariant under batch permutations, as the contract requires.
  std::vector<double> terms;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i].empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, z[i][j]);
    std::vector<double> exps;
    exps.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) exps.push_back(std::exp(z[i][j] - mx));
    std::vector<double> sorted = exps;
    std::sort(sorted.begin(), sorted.end());
    double denom = 0.0;
    for (double e : sorted) denom += e;
    const double lse = mx + std::log(denom);

    const double inv_p = 1.0 / static_cast<double>(positives[i].size());
    for (std::size_t p : positives[i]) terms.push_back(inv_p * (lse - z[i][p]));

    // d term_i / d z[i][j] = softmax_j - [j in P(i)]/|P(i)|
    std::size_t e = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) g[i][j] = exps[e++] / denom;
    for (std::size_t p : positives[i]) g[i][p] -= inv_p;
  }
  std::sort(terms.begin(), terms.end());
  for (double t : terms) out.value += t;

  // z[i][j] = v_i.v_j / tau pulls gradient into both v_i and v_j.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || g[i][j] == 0.0) continue;
      const double w = g[i][j] / tau;
      for (std::size_t c = 0; c < d; ++c) {
        out.embedding_grads[i][c] += w * v[j][c];
        out.embedding_grads[j][c] += w * v[i][c];
      }
    }

  if (!std::isfinite(out.value))
    throw NumericError("supcon_loss: non-finite loss value");
  return out;
}

// In-batch softmax cross-entropy for singleton positives. Kept as a separate
// straightforward implementation so the generalization property (equality
// with supcon_loss on singleton batches) is a real cross-check.
inline double inbatch_softmax_ce(const std::vector<std::vector<double>>& v,
                                 const std::vector<std::vector<std::size_t>>& positives,
                                 double tau) {
  detail::check_positives(v, positives);
  const std::size_t n = v.size();
  const std::size_t d = v[0].size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i].empty()) continue;
    if (positives[i].size() > 1)
      throw DataError("inbatch_softmax_ce: positives must be singletons");
    const std::size_t p = positives[i][0];
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> zi(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += v[i][c] * v[j][c];
      zi[j] = s / tau;
      mx = std::max(mx, zi[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) denom += std::exp(zi[j] - mx);
    total += (mx + std::log(denom)) - zi[p];
  }
  return total;
}

}  // namespace propenc
