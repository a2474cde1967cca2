#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "propenc/alignment.hpp"
#include "propenc/jsonl.hpp"
#include "propenc/rng.hpp"

using namespace propenc;

namespace {

AffinityMatrix random_affinity(Rng& rng, std::size_t r, std::size_t c,
                               bool binary) {
  AffinityMatrix m(r, c);
  for (auto& v : m.scores) {
    if (binary)
      v = rng.below(3) == 0 ? 1.0 : 0.0;
    else
      v = rng.below(4) == 0 ? 0.0 : rng.uniform(0.0, 1.0);
  }
  return m;
}

}  // namespace

TEST_CASE("build_affinity matches normalized tokens") {
  const auto sent = tokenize("Dracula is a novel");
  const auto m = build_affinity(tokenize("Dracula is a novel"), sent);
  REQUIRE(m.rows == 4);
  REQUIRE(m.cols == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(m.at(i, j) == (i == j ? 1.0 : 0.0));

  const auto dup = build_affinity(tokenize("novel"),
                                  tokenize("a novel about a novel"));
  REQUIRE(dup.rows == 1);
  const std::vector<double> expect{0, 1, 0, 0, 1};
  for (std::size_t j = 0; j < 5; ++j) CHECK(dup.at(0, j) == expect[j]);

  const auto zero =
      build_affinity(tokenize("flying pig"), tokenize("the cat sat"));
  for (double v : zero.scores) CHECK(v == 0.0);

  CHECK_THROWS_AS(build_affinity(tokenize(""), sent), DataError);
}

TEST_CASE("build_affinity sees through inflection") {
  const auto m = build_affinity(tokenize("novels published"),
                                tokenize("the novel was Published"));
  CHECK(m.at(0, 1) == 1.0);
  CHECK(m.at(1, 3) == 1.0);
}

TEST_CASE("window offset adds eps per diagonal neighbor") {
  AffinityMatrix single(3, 3);
  single.at(1, 1) = 1.0;
  const auto unchanged = apply_window_offset(single);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(unchanged.scores[i] == single.scores[i]);

  // prop "a novel" vs "a novel about a plot"
  const auto base = build_affinity(tokenize("a novel"),
                                   tokenize("a novel about a plot"));
  const auto off = apply_window_offset(base, 3, 0.1);
  CHECK(off.at(1, 1) == doctest::Approx(1.1).epsilon(1e-12));  // next to (0,0)
  CHECK(off.at(0, 3) == doctest::Approx(1.0).epsilon(1e-12));  // no neighbor
  CHECK(off.at(0, 0) == doctest::Approx(1.1).epsilon(1e-12));

  AffinityMatrix ones(3, 3);
  for (auto& v : ones.scores) v = 1.0;
  const auto o = apply_window_offset(ones, 3, 0.1);
  CHECK(o.at(1, 1) == doctest::Approx(1.4).epsilon(1e-12));  // 4 diagonals
  CHECK(o.at(0, 0) == doctest::Approx(1.1).epsilon(1e-12));  // 1 diagonal
  CHECK(o.at(0, 1) == doctest::Approx(1.2).epsilon(1e-12));  // 2 diagonals
}

TEST_CASE("window offset never creates new nonzeros") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto base = random_affinity(rng, 1 + rng.below(6), 1 + rng.below(6),
                                      true);
    const auto off = apply_window_offset(base, 3, 0.1);
    for (std::size_t i = 0; i < base.scores.size(); ++i) {
      CHECK((base.scores[i] > 0.0) == (off.scores[i] > 0.0));
      CHECK(off.scores[i] < 2.0);
    }
  }
}

TEST_CASE("hungarian_max_match hand cases") {
  AffinityMatrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const auto id = hungarian_max_match(eye);
  REQUIRE(id.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(id[i].first == i);
    CHECK(id[i].second == i);
  }

  AffinityMatrix forced(2, 2);
  forced.at(0, 0) = 1.0;
  forced.at(0, 1) = 1.0;
  forced.at(1, 1) = 1.0;
  const auto f = hungarian_max_match(forced);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(f[1] == std::pair<std::size_t, std::size_t>{1, 1});

  AffinityMatrix zero(2, 3);
  CHECK(hungarian_max_match(zero).empty());
}

TEST_CASE("hungarian_max_match equals the exhaustive oracle") {
  Rng rng(47);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t r = 1 + rng.below(7);
    const std::size_t c = 1 + rng.below(7);
    const auto m = random_affinity(rng, r, c, trial % 2 == 0);
    const auto got = hungarian_max_match(m);
    const auto want = oracles::brute_force_max_match(m);
    double total = 0.0;
    for (const auto& [i, j] : got) total += m.at(i, j);
    CHECK(std::abs(total - want.total) <= 1e-9);
    CHECK(got == want.assignment);
  }
}

TEST_CASE("hungarian_max_match on rectangular matrices") {
  Rng rng(53);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t r = 1 + rng.below(5);
    const std::size_t c = 5 + rng.below(5);  // wide
    const auto m = random_affinity(rng, r, c, false);
    const auto got = hungarian_max_match(m);
    const auto want = oracles::brute_force_max_match(m);
    CHECK(got == want.assignment);
  }
}

TEST_CASE("proposition_to_mask end to end") {
  const auto sent = tokenize("Dracula is a novel published in 1897");
  const auto full = proposition_to_mask("Dracula is a novel published in 1897",
                                        sent);
  CHECK(full == BinaryMask{1, 1, 1, 1, 1, 1, 1});

  const auto part = proposition_to_mask("Dracula is a novel", sent);
  CHECK(part == BinaryMask{1, 1, 1, 1, 0, 0, 0});

  const auto tie = proposition_to_mask("a novel",
                                       tokenize("a novel about a count"));
  CHECK(tie == BinaryMask{1, 1, 0, 0, 0});

  CHECK_THROWS_WITH_AS(
      proposition_to_mask("zeppelin", tokenize("a quiet village")),
      "unalignable proposition", DataError);
}

TEST_CASE("proposition_to_mask popcount and determinism") {
  Rng rng(61);
  const std::vector<std::string> words{"ash", "birch", "cedar", "dew",
                                       "elm",  "fern"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string sent_text, prop_text;
    const std::size_t n = 3 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i)
      sent_text += words[rng.below(words.size())] + " ";
    const std::size_t pn = 1 + rng.below(3);
    for (std::size_t i = 0; i < pn; ++i)
      prop_text += words[rng.below(words.size())] + " ";
    const auto sent = tokenize(sent_text);
    try {
      const auto m1 = proposition_to_mask(prop_text, sent);
      const auto m2 = proposition_to_mask(prop_text, sent);
      CHECK(m1 == m2);
      CHECK(popcount(m1) <= tokenize(prop_text).size());
      CHECK(popcount(m1) >= 1);
    } catch (const DataError&) {
      // unalignable draws are fine here
    }
  }
}

TEST_CASE("committed alignment fixture reproduces expected masks") {
  const auto records =
      read_jsonl(std::string(PROPENC_FIXTURE_DIR) + "/alignment_fixture.jsonl");
  REQUIRE(records.size() == 20);
  for (const auto& rec : records) {
    const auto sent = tokenize(rec.at("sentence").get<std::string>());
    const auto mask =
        proposition_to_mask(rec.at("prop").get<std::string>(), sent);
    const auto expected = mask_from_json(rec.at("mask"), "fixture");
    INFO("prop: ", rec.at("prop").get<std::string>());
    INFO("sentence: ", rec.at("sentence").get<std::string>());
    CHECK(mask == expected);
  }
}
