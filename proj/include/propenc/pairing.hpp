#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "propenc/errors.hpp"
#include "propenc/mask.hpp"
#include "propenc/rng.hpp"
#include "propenc/tokenizer.hpp"

namespace propenc {

struct Proposition {
  std::string text;
  BinaryMask mask;
};

struct SentencePair {
  TokenizedText sent_a;
  TokenizedText sent_b;
  std::vector<Proposition> props_a;
  std::vector<Proposition> props_b;
};

// Cross-sentence positive links: (index into props_a, index into props_b).
struct PositivePairSet {
  std::set<std::pair<std::size_t, std::size_t>> pairs;

  bool contains(std::size_t a, std::size_t b) const {
    return pairs.count({a, b}) > 0;
  }
  bool empty() const { return pairs.empty(); }
};

// Deterministic entailment judgement, premise -> hypothesis.
class EntailmentOracle {
 public:
  virtual ~EntailmentOracle() = default;
  virtual bool entails(std::string_view premise,
                       std::string_view hypothesis) const = 0;
};

// Stand-in for an external NLI model: premise entails hypothesis iff the
// hypothesis' normalized-token multiset is covered by the premise's and the
// multiset Jaccard similarity of the two reaches the threshold. Mutual
// entailment under this rule means identical normalized multisets.
class LexicalEquivalenceOracle final : public EntailmentOracle {
 public:
  explicit LexicalEquivalenceOracle(double threshold = 0.8,
                                    TokenNormalizer norm = &normalize_token)
      : threshold_(threshold), norm_(norm) {}

  bool entails(std::string_view premise,
               std::string_view hypothesis) const override {
    const auto p = multiset(premise);
    const auto h = multiset(hypothesis);
    if (p.empty() || h.empty()) return false;
    std::size_t inter = 0, p_total = 0, h_total = 0;
    for (const auto& [tok, cnt] : p) p_total += cnt;
    for (const auto& [tok, cnt] : h) {
      h_total += cnt;
      auto it = p.find(tok);
      const std::size_t in_p = it == p.end() ? 0 : it->second;
      if (in_p < cnt) return false;  // hypothesis not covered
      inter += std::min(cnt, in_p);
    }
    const std::size_t uni = p_total + h_total - inter;
    return static_cast<double>(inter) / static_cast<double>(uni) >= threshold_;
  }

 private:
  std::map<std::string, std::size_t> multiset(std::string_view text) const {
    std::map<std::string, std::size_t> out;
    for (const auto& t : tokenize(text).tokens) ++out[norm_(t)];
    return out;
  }

  double threshold_;
  TokenNormalizer norm_;
};

// (a_i, b_j) is positive iff entailment holds in both directions.
// Propositions within the same sentence are never tested.
inline PositivePairSet label_positive_pairs(const SentencePair& pair,
                                            const EntailmentOracle& oracle) {
  PositivePairSet out;
  for (std::size_t i = 0; i < pair.props_a.size(); ++i)
    for (std::size_t j = 0; j < pair.props_b.size(); ++j) {
      const auto& a = pair.props_a[i].text;
      const auto& b = pair.props_b[j].text;
      try {
        if (oracle.entails(a, b) && oracle.entails(b, a))
          out.pairs.insert({i, j});
      } catch (const std::exception& e) {
        throw DataError("entailment oracle failed on pair (a=" +
                        std::to_string(i) + ", b=" + std::to_string(j) +
                        "): " + e.what());
      }
    }
  return out;
}

struct LabeledPair {
  SentencePair pair;
  PositivePairSet positives;
};

// One training batch: M sentences, N propositions, and the symmetric,
// irreflexive positives map over batch-level proposition indices.
struct Minibatch {
  std::vector<TokenizedText> sentences;
  struct PropRef {
    std::size_t sentence_idx;
    BinaryMask mask;
  };
  std::vector<PropRef> propositions;
  std::vector<std::vector<std::size_t>> positives;  // i -> sorted P(i)
};

// Shuffle pairs with the given seed and group them so that both sentences of
// a pair land in the same batch; the final short batch is kept. P(i) holds
// cross-sentence labeled positives only.
inline std::vector<Minibatch> build_minibatches(
    const std::vector<LabeledPair>& corpus, std::size_t batch_size_sentences,
    std::uint64_t seed) {
  if (corpus.empty()) throw DataError("build_minibatches: empty corpus");
  if (batch_size_sentences < 2 || batch_size_sentences % 2 != 0)
    throw DataError("batch_size_sentences must be even and >= 2");
  const std::size_t pairs_per_batch = batch_size_sentences / 2;

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Minibatch> batches;
  for (std::size_t start = 0; start < order.size(); start += pairs_per_batch) {
    const std::size_t end =
        std::min(order.size(), start + pairs_per_batch);
    Minibatch batch;
    for (std::size_t q = start; q < end; ++q) {
      const LabeledPair& lp = corpus[order[q]];
      const std::size_t sent_a_idx = batch.sentences.size();
      batch.sentences.push_back(lp.pair.sent_a);
      batch.sentences.push_back(lp.pair.sent_b);

      const std::size_t base_a = batch.propositions.size();
      for (const auto& p : lp.pair.props_a)
        batch.propositions.push_back({sent_a_idx, p.mask});
      const std::size_t base_b = batch.propositions.size();
      for (const auto& p : lp.pair.props_b)
        batch.propositions.push_back({sent_a_idx + 1, p.mask});
      batch.positives.resize(batch.propositions.size());

      for (const auto& [i, j] : lp.positives.pairs) {
        batch.positives[base_a + i].push_back(base_b + j);
        batch.positives[base_b + j].push_back(base_a + i);
      }
    }
    for (auto& p : batch.positives) std::sort(p.begin(), p.end());
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace propenc
