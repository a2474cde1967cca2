#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "propenc/encoder.hpp"
#include "propenc/errors.hpp"
#include "propenc/index.hpp"
#include "propenc/mask.hpp"
#include "propenc/tokenizer.hpp"

namespace propenc {

// Ranked candidate keys per query, best first.
using Rankings = std::map<std::string, std::vector<PropKey>>;
// Relevant keys per query.
using GroundTruth = std::map<std::string, std::set<PropKey>>;

namespace detail {

inline const std::set<PropKey>& truth_for(const GroundTruth& truth,
                                          const std::string& qid) {
  auto it = truth.find(qid);
  if (it == truth.end()) throw DataError("missing ground truth for query " + qid);
  if (it->second.empty()) throw DataError("empty truth set for query " + qid);
  return it->second;
}

}  // namespace detail

// Fraction of queries whose top-ranked result is relevant.
inline double precision_at_1(const Rankings& rankings,
                             const GroundTruth& truth) {
  if (rankings.empty()) throw DataError("precision_at_1: no rankings");
  std::size_t hits = 0;
  for (const auto& [qid, ranked] : rankings) {
    const auto& rel = detail::truth_for(truth, qid);
    if (ranked.empty()) throw DataError("empty ranking for query " + qid);
    if (rel.count(ranked.front())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// Mean over queries of |top-k intersect truth| / |truth|.
inline double recall_at_k(const Rankings& rankings, const GroundTruth& truth,
                          std::size_t k) {
  if (k < 1) throw DataError("recall_at_k: k must be >= 1");
  if (rankings.empty()) throw DataError("recall_at_k: no rankings");
  double total = 0.0;
  for (const auto& [qid, ranked] : rankings) {
    const auto& rel = detail::truth_for(truth, qid);
    std::size_t found = 0;
    const std::size_t upto = std::min(k, ranked.size());
    for (std::size_t i = 0; i < upto; ++i)
      if (rel.count(ranked[i])) ++found;
    total += static_cast<double>(found) / static_cast<double>(rel.size());
  }
  return total / static_cast<double>(rankings.size());
}

// Token-level Jaccard similarity of two equal-length masks against a
// threshold. Two empty masks never match.
inline bool jaccard_mask_match(const BinaryMask& a, const BinaryMask& b,
                               double theta) {
  if (a.size() != b.size())
    throw DataError("jaccard_mask_match: mask length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ai = a[i] != 0, bi = b[i] != 0;
    inter += (ai && bi);
    uni += (ai || bi);
  }
  if (uni == 0) return false;
  return static_cast<double>(inter) / static_cast<double>(uni) >= theta;
}

// A text pair restricted to condition word sets, with a human rating.
struct ConditionalInstance {
  TokenizedText sentence_1;
  TokenizedText sentence_2;
  BinaryMask mask_1;
  BinaryMask mask_2;
  double human_score = 0.0;
};

// Cosine between the two condition word sets, each encoded in its own
// sentence's context.
inline double conditional_similarity(const EncoderParams& params,
                                     const Vocab& vocab,
                                     const ConditionalInstance& inst) {
  if (popcount(inst.mask_1) == 0 || popcount(inst.mask_2) == 0)
    throw DataError("conditional_similarity: empty mask");
  const auto e1 = encode_propositions(params, vocab.encode(inst.sentence_1),
                                      {inst.mask_1});
  const auto e2 = encode_propositions(params, vocab.encode(inst.sentence_2),
                                      {inst.mask_2});
  double s = 0.0;
  for (std::size_t i = 0; i < e1[0].size(); ++i) s += e1[0][i] * e2[0][i];
  return s;
}

namespace detail {

// Average ranks with ties sharing the mean of their rank positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Spearman rank correlation with average ranks for ties. Constant input on
// either side leaves the coefficient undefined.
inline double spearman(const std::vector<double>& pred,
                       const std::vector<double>& human) {
  if (pred.size() != human.size())
    throw DataError("spearman: length mismatch");
  if (pred.size() < 2) throw DataError("spearman: need at least 2 points");
  const auto ra = detail::average_ranks(pred);
  const auto rb = detail::average_ranks(human);
  const double n = static_cast<double>(pred.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw DataError("spearman: undefined for constant input");
  return cov / std::sqrt(va * vb);
}

// Fuzzy-match evaluation subset: keep the queries whose generated mask
// Jaccard-matches the gold mask at theta. Metrics are then computed on the
// kept subset only.
inline std::set<std::string> fuzzy_matched_queries(
    const std::map<std::string, BinaryMask>& generated,
    const std::map<std::string, BinaryMask>& gold, double theta) {
  std::set<std::string> kept;
  for (const auto& [qid, gen_mask] : generated) {
    auto it = gold.find(qid);
    if (it == gold.end()) throw DataError("missing gold mask for query " + qid);
    if (jaccard_mask_match(gen_mask, it->second, theta)) kept.insert(qid);
  }
  return kept;
}

struct MetricsReport {
  double p_at_1 = 0.0;
  double r_at_5 = 0.0;
  double r_at_10 = 0.0;
  double r_at_20 = 0.0;
  bool has_retrieval = false;
  double spearman_r = 0.0;
  bool has_spearman = false;
};

inline MetricsReport retrieval_metrics(const Rankings& rankings,
                                       const GroundTruth& truth) {
  MetricsReport r;
  r.p_at_1 = precision_at_1(rankings, truth);
  r.r_at_5 = recall_at_k(rankings, truth, 5);
  r.r_at_10 = recall_at_k(rankings, truth, 10);
  r.r_at_20 = recall_at_k(rankings, truth, 20);
  r.has_retrieval = true;
  return r;
}

}  // namespace propenc
