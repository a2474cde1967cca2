#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "propenc/nli_client.hpp"
#include "propenc/pairing.hpp"

using namespace propenc;

namespace {

SentencePair make_pair(const std::vector<std::string>& props_a,
                       const std::vector<std::string>& props_b) {
  SentencePair p;
  std::string a_text, b_text;
  for (const auto& s : props_a) a_text += s + " . ";
  for (const auto& s : props_b) b_text += s + " . ";
  p.sent_a = tokenize(a_text);
  p.sent_b = tokenize(b_text);
  for (const auto& s : props_a)
    p.props_a.push_back({s, BinaryMask(p.sent_a.size(), 1)});
  for (const auto& s : props_b)
    p.props_b.push_back({s, BinaryMask(p.sent_b.size(), 1)});
  return p;
}

}  // namespace

TEST_CASE("lexical oracle entailment rules") {
  const LexicalEquivalenceOracle oracle(0.8);
  // identical multisets, reordered
  CHECK(oracle.entails("dracula is a novel", "a novel is dracula"));
  CHECK(oracle.entails("a novel is dracula", "dracula is a novel"));

  // hypothesis adds tokens: premise does not cover it; reverse direction
  // fails the Jaccard threshold (4/7)
  CHECK_FALSE(oracle.entails("dracula is a novel",
                             "dracula is a 19th century novel"));
  CHECK_FALSE(oracle.entails("dracula is a 19th century novel",
                             "dracula is a novel"));
  const LexicalEquivalenceOracle loose(0.5);
  CHECK(loose.entails("dracula is a 19th century novel", "dracula is a novel"));

  CHECK_FALSE(oracle.entails("a b c", "x y z"));

  // exact threshold: |h| / |p| = 4/5
  const LexicalEquivalenceOracle at08(0.8);
  CHECK(at08.entails("a b c d e", "a b c d"));
  CHECK_FALSE(at08.entails("a b c d e f", "a b c d"));

  // inflection folds through normalization
  CHECK(oracle.entails("he walks the dogs", "he walk the dog"));
}

TEST_CASE("label_positive_pairs requires bidirectional entailment") {
  const LexicalEquivalenceOracle oracle(0.8);
  const auto pair = make_pair({"the king holds the orb", "a raven watches"},
                              {"the orb the king holds", "storms come"});
  const auto pos = label_positive_pairs(pair, oracle);
  CHECK(pos.pairs == std::set<std::pair<std::size_t, std::size_t>>{{0, 0}});

  // strict subset is one-directional only
  const auto sub = make_pair({"the king holds the orb"},
                             {"the old king holds the golden orb"});
  CHECK(label_positive_pairs(sub, oracle).empty());
}

TEST_CASE("oracle failures carry pair identifiers") {
  struct Exploding final : EntailmentOracle {
    bool entails(std::string_view, std::string_view) const override {
      throw std::runtime_error("backend down");
    }
  };
  const auto pair = make_pair({"a"}, {"b"});
  CHECK_THROWS_WITH_AS(label_positive_pairs(pair, Exploding{}),
                       doctest::Contains("(a=0, b=0)"), DataError);
}

TEST_CASE("build_minibatches basics") {
  const LexicalEquivalenceOracle oracle(0.8);
  std::vector<LabeledPair> corpus;
  LabeledPair lp;
  lp.pair = make_pair({"the fox runs", "rain falls"}, {"runs the fox"});
  lp.positives = label_positive_pairs(lp.pair, oracle);
  corpus.push_back(lp);

  const auto batches = build_minibatches(corpus, 2, 1);
  REQUIRE(batches.size() == 1);
  const auto& b = batches[0];
  CHECK(b.sentences.size() == 2);
  REQUIRE(b.propositions.size() == 3);
  CHECK(b.positives[0] == std::vector<std::size_t>{2});
  CHECK(b.positives[1].empty());
  CHECK(b.positives[2] == std::vector<std::size_t>{0});

  CHECK_THROWS_AS(build_minibatches(corpus, 3, 1), DataError);  // odd
  CHECK_THROWS_AS(build_minibatches({}, 2, 1), DataError);
}

TEST_CASE("build_minibatches covers each proposition once per epoch") {
  const LexicalEquivalenceOracle oracle(0.8);
  std::vector<LabeledPair> corpus;
  std::size_t total_props = 0;
  for (int i = 0; i < 100; ++i) {
    LabeledPair lp;
    const std::string shared = "fact" + std::to_string(i) + " holds here";
    lp.pair = make_pair({shared, "noise" + std::to_string(i) + " one two"},
                        {"holds here fact" + std::to_string(i)});
    lp.positives = label_positive_pairs(lp.pair, oracle);
    REQUIRE(lp.positives.pairs.size() == 1);
    corpus.push_back(lp);
    total_props += 3;
  }
  const auto batches = build_minibatches(corpus, 16, 5);
  CHECK(batches.size() == 13);  // 12 full batches of 8 pairs + 4 leftover
  std::size_t seen = 0;
  for (const auto& b : batches) {
    CHECK(b.sentences.size() % 2 == 0);
    seen += b.propositions.size();
    for (std::size_t i = 0; i < b.positives.size(); ++i)
      for (std::size_t p : b.positives[i]) {
        CHECK(p != i);
        // symmetric
        const auto& back = b.positives[p];
        CHECK(std::find(back.begin(), back.end(), i) != back.end());
        // never within the same sentence
        CHECK(b.propositions[p].sentence_idx !=
              b.propositions[i].sentence_idx);
      }
  }
  CHECK(seen == total_props);

  // same seed, same composition
  const auto again = build_minibatches(corpus, 16, 5);
  REQUIRE(again.size() == batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    CHECK(again[i].sentences.size() == batches[i].sentences.size());
    for (std::size_t s = 0; s < batches[i].sentences.size(); ++s)
      CHECK(again[i].sentences[s].raw == batches[i].sentences[s].raw);
  }
}

TEST_CASE("pipe oracle speaks the line protocol") {
  if (!std::filesystem::exists("/usr/bin/awk")) {
    MESSAGE("skipping: /usr/bin/awk not available");
    return;
  }
  // entail iff premise == hypothesis; -W interactive keeps mawk line-buffered
  const PipeOracle oracle({"/usr/bin/awk", "-W", "interactive", "-F\t",
                           "{ print ($1 == $2) ? \"entail\" : \"not-entail\"; "
                           "fflush(); }"});
  CHECK(oracle.entails("same text", "same text"));
  CHECK_FALSE(oracle.entails("one text", "another text"));
  CHECK(oracle.entails("tab\tand\nnewline", "tab and newline"));
}
