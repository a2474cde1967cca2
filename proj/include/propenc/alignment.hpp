#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

#include "propenc/errors.hpp"
#include "propenc/mask.hpp"
#include "propenc/tokenizer.hpp"

namespace propenc {

// Nonnegative score matrix between proposition tokens (rows) and sentence
// tokens (columns).
struct AffinityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> scores;

  AffinityMatrix() = default;
  AffinityMatrix(std::size_t r, std::size_t c)
      : rows(r), cols(c), scores(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return scores[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
};

struct AlignConfig {
  int window = 3;       // context window width; neighbor radius is (window-1)/2
  double eps = 0.1;     // offset added per neighboring match
  TokenNormalizer normalizer = &normalize_token;
};

// entry(i,j) = 1 iff the normalized tokens match.
inline AffinityMatrix build_affinity(const TokenizedText& prop,
                                     const TokenizedText& sent,
                                     TokenNormalizer norm = &normalize_token) {
  if (prop.tokens.empty()) throw DataError("empty proposition");
  std::vector<std::string> pn(prop.size()), sn(sent.size());
  for (std::size_t i = 0; i < prop.size(); ++i) pn[i] = norm(prop.tokens[i]);
  for (std::size_t j = 0; j < sent.size(); ++j) sn[j] = norm(sent.tokens[j]);
  AffinityMatrix m(prop.size(), sent.size());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      m.at(i, j) = (pn[i] == sn[j]) ? 1.0 : 0.0;
  return m;
}

// For each match cell, add eps per neighboring match at diagonal offsets
// within the window (0 < |di| <= r and 0 < |dj| <= r, r = (window-1)/2).
// Non-match cells stay exactly 0, so the offset can only re-rank ties among
// true matches: with window 3 the added mass per cell is at most 4*eps < 1.
inline AffinityMatrix apply_window_offset(const AffinityMatrix& m,
                                          int window = 3, double eps = 0.1) {
  const int radius = (window - 1) / 2;
  AffinityMatrix out = m;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (m.at(i, j) <= 0.0) continue;
      int neighbors = 0;
      for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj) {
          if (di == 0 || dj == 0) continue;
          const std::ptrdiff_t ni = static_cast<std::ptrdiff_t>(i) + di;
          const std::ptrdiff_t nj = static_cast<std::ptrdiff_t>(j) + dj;
          if (ni < 0 || nj < 0 || ni >= static_cast<std::ptrdiff_t>(m.rows) ||
              nj >= static_cast<std::ptrdiff_t>(m.cols))
            continue;
          if (m.at(static_cast<std::size_t>(ni),
                   static_cast<std::size_t>(nj)) > 0.0)
            ++neighbors;
        }
      out.at(i, j) += eps * neighbors;
    }
  return out;
}

namespace detail {

// Maximum-total value of an injective partial assignment on a nonnegative
// score matrix: pad to square and run the O(n^3) potentials form of the
// Hungarian algorithm on negated scores.
inline double assignment_max_value(const AffinityMatrix& m) {
  const std::size_t n = std::max(m.rows, m.cols);
  if (n == 0) return 0.0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto cost = [&](std::size_t i, std::size_t j) -> double {
    return (i < m.rows && j < m.cols) ? -m.at(i, j) : 0.0;
  };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) total += -cost(p[j] - 1, j - 1);
  return total;
}

// Residual view: the sub-matrix of rows >= row_from and the columns not yet
// consumed by the fixed prefix.
inline AffinityMatrix residual(const AffinityMatrix& m, std::size_t row_from,
                               const std::vector<char>& col_used) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < m.cols; ++j)
    if (!col_used[j]) cols.push_back(j);
  AffinityMatrix r(m.rows - row_from, cols.size());
  for (std::size_t i = row_from; i < m.rows; ++i)
    for (std::size_t k = 0; k < cols.size(); ++k)
      r.at(i - row_from, k) = m.at(i, cols[k]);
  return r;
}

}  // namespace detail

// One matched (prop_idx, sent_idx) pair.
using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;

// Injective assignment maximizing total score. Zero-score pairs are dropped
// from the output; among equal-total optima the lexicographically smallest
// assignment (by prop_idx, then sent_idx) is returned. Totals are compared
// with a 1e-9 slack to absorb summation-order roundoff.
inline Assignment hungarian_max_match(const AffinityMatrix& m) {
  constexpr double kTieTol = 1e-9;
  if (m.rows == 0 || m.cols == 0) return {};
  const double total = detail::assignment_max_value(m);
  Assignment out;
  std::vector<char> col_used(m.cols, 0);
  double fixed = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    bool assigned = false;
    for (std::size_t j = 0; j < m.cols && !assigned; ++j) {
      if (col_used[j] || m.at(i, j) <= 0.0) continue;
      col_used[j] = 1;
      const double rest = detail::assignment_max_value(
          detail::residual(m, i + 1, col_used));
      if (fixed + m.at(i, j) + rest >= total - kTieTol) {
        out.emplace_back(i, j);
        fixed += m.at(i, j);
        assigned = true;
      } else {
        col_used[j] = 0;
      }
    }
  }
  return out;
}

// Full pipeline for one proposition: tokenize, build affinity, offset,
// match, project onto a sentence mask. Throws when nothing aligns.
inline BinaryMask proposition_to_mask(std::string_view prop_text,
                                      const TokenizedText& sentence,
                                      const AlignConfig& cfg = {}) {
  if (sentence.tokens.empty()) throw DataError("empty sentence");
  const TokenizedText prop = tokenize(prop_text);
  const AffinityMatrix base = build_affinity(prop, sentence, cfg.normalizer);
  const AffinityMatrix offset = apply_window_offset(base, cfg.window, cfg.eps);
  const Assignment match = hungarian_max_match(offset);
  if (match.empty()) throw DataError("unalignable proposition");
  BinaryMask mask(sentence.size(), 0);
  for (const auto& [pi, sj] : match) mask[sj] = 1;
  return mask;
}

}  // namespace propenc
