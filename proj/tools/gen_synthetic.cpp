// Generates the committed synthetic corpus: sentence pairs with planted
// equivalent propositions, the generator's ground-truth positive labels, and
// conditional-similarity instances. Deterministic for a fixed seed; the
// repository ships the output of `gen_synthetic data 7`.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "propenc/rng.hpp"
#include "propenc/tokenizer.hpp"

using nlohmann::json;
using propenc::Rng;

namespace {

// Pseudoword pools built from fixed syllables. The seen-set is shared across
// pools so subject/verb/object words never collide: that way two distinct
// facts can never render to the same normalized token multiset. Words may
// not end in 'e' so that the plural form strips back to the bare word
// ("boles" would normalize to "bol", not "bole").
std::vector<std::string> make_pool(Rng& rng, std::set<std::string>& seen,
                                   std::size_t count, std::size_t syllables) {
  static const std::vector<std::string> onsets = {
      "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
      "br", "dr", "gr", "kl", "pl", "st", "tr"};
  static const std::vector<std::string> nuclei = {"a", "e", "i", "o", "u",
                                                  "ai", "ea", "or"};
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(onsets.size())];
      w += nuclei[rng.below(nuclei.size())];
    }
    if (w.size() < 4) w += "n";
    if (w.back() == 'e') w += "n";
    if (propenc::normalize_token(w) != w) continue;
    if (propenc::normalize_token(w + "s") != w) continue;
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

struct Fact {
  std::string subj;
  std::string verb;
  std::string obj;
};

// Two renderings with identical normalized token multisets: one plain, one
// reordered and/or inflected.
std::string render_plain(const Fact& f) {
  return "the " + f.subj + " " + f.verb + "s the " + f.obj;
}

std::string render_variant(const Fact& f, Rng& rng) {
  switch (rng.below(4)) {
    case 0:
    case 1:  // swap subject and object; token multiset unchanged
      return "the " + f.obj + " " + f.verb + "s the " + f.subj;
    case 2:  // pluralize the object in place
      return "the " + f.subj + " " + f.verb + "s the " + f.obj + "s";
    default:  // swap and pluralize
      return "the " + f.obj + "s " + f.verb + "s the " + f.subj;
  }
}

std::string join_clauses(const std::vector<std::string>& clauses) {
  std::string out;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) out += i + 1 == clauses.size() ? " and " : " , ";
    out += clauses[i];
  }
  out += " .";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "data";
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 7;
  const std::size_t n_pairs = argc > 3 ? std::stoull(argv[3]) : 200;
  std::filesystem::create_directories(out_dir);

  Rng rng(seed);
  std::set<std::string> seen;
  const auto subjects = make_pool(rng, seen, 80, 2);
  const auto verbs = make_pool(rng, seen, 45, 2);
  const auto objects = make_pool(rng, seen, 85, 2);

  // Fact universe; each pair draws shared and side-unique facts from it.
  // Any two facts share at most one slot value, so no two distinct facts
  // ever agree on two of their three content words.
  std::vector<Fact> facts;
  while (facts.size() < 220) {
    Fact f{subjects[rng.below(subjects.size())], verbs[rng.below(verbs.size())],
           objects[rng.below(objects.size())]};
    if (f.subj == f.obj) continue;
    bool confusable = false;
    for (const Fact& g : facts) {
      const int overlap = (f.subj == g.subj) + (f.verb == g.verb) +
                          (f.obj == g.obj);
      if (overlap >= 2) {
        confusable = true;
        break;
      }
    }
    if (!confusable) facts.push_back(f);
  }

  std::ofstream pairs_out(out_dir + "/synthetic_pairs.jsonl");
  std::ofstream truth_out(out_dir + "/synthetic_truth.jsonl");

  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t n_shared = 1 + rng.below(2);   // 1..2
    const std::size_t n_extra_a = 1 + rng.below(2);  // 1..2
    const std::size_t n_extra_b = 1 + rng.below(2);

    // Distinct facts within the pair so that no accidental equivalences
    // arise: distinct (subj, verb, obj) triples never share a full
    // normalized multiset.
    std::set<std::size_t> chosen;
    auto draw = [&]() {
      for (;;) {
        const std::size_t i = rng.below(facts.size());
        if (chosen.insert(i).second) return i;
      }
    };
    std::vector<std::size_t> shared, extra_a, extra_b;
    for (std::size_t i = 0; i < n_shared; ++i) shared.push_back(draw());
    for (std::size_t i = 0; i < n_extra_a; ++i) extra_a.push_back(draw());
    for (std::size_t i = 0; i < n_extra_b; ++i) extra_b.push_back(draw());

    struct Side {
      std::vector<std::string> clauses;
      std::vector<long> fact_of_clause;  // fact index, for truth labels
    };
    auto build_side = [&](const std::vector<std::size_t>& shared_f,
                          const std::vector<std::size_t>& unique_f,
                          bool variant) {
      Side side;
      for (std::size_t f : shared_f) {
        side.clauses.push_back(variant ? render_variant(facts[f], rng)
                                       : render_plain(facts[f]));
        side.fact_of_clause.push_back(static_cast<long>(f));
      }
      for (std::size_t f : unique_f) {
        side.clauses.push_back(render_plain(facts[f]));
        side.fact_of_clause.push_back(static_cast<long>(f));
      }
      // Shuffle clause order so shared facts sit at varying positions.
      std::vector<std::size_t> order(side.clauses.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      Side shuffled;
      for (std::size_t i : order) {
        shuffled.clauses.push_back(side.clauses[i]);
        shuffled.fact_of_clause.push_back(side.fact_of_clause[i]);
      }
      return shuffled;
    };

    const Side side_a = build_side(shared, extra_a, false);
    const Side side_b = build_side(shared, extra_b, true);

    json rec{{"id", p},
             {"sent_a", join_clauses(side_a.clauses)},
             {"sent_b", join_clauses(side_b.clauses)},
             {"props_a", side_a.clauses},
             {"props_b", side_b.clauses}};
    pairs_out << rec.dump() << '\n';

    json positives = json::array();
    for (std::size_t i = 0; i < side_a.fact_of_clause.size(); ++i)
      for (std::size_t j = 0; j < side_b.fact_of_clause.size(); ++j)
        if (side_a.fact_of_clause[i] == side_b.fact_of_clause[j])
          positives.push_back(json::array({i, j}));
    truth_out << json{{"id", p}, {"positives", positives}}.dump() << '\n';
  }
  pairs_out.close();
  truth_out.close();

  // Conditional-similarity instances: the condition words are the verbs of
  // one clause per side; the synthetic rating reflects how related the two
  // marked word sets are (same fact > same verb > unrelated).
  std::ofstream csts_out(out_dir + "/csts_instances.jsonl");
  for (std::size_t i = 0; i < 40; ++i) {
    const Fact& f1 = facts[rng.below(facts.size())];
    Fact f2 = f1;
    double score = 5.0;
    const std::size_t kind = rng.below(3);
    if (kind == 1) {  // same verb, different arguments
      f2.subj = subjects[rng.below(subjects.size())];
      f2.obj = objects[rng.below(objects.size())];
      score = 3.0;
    } else if (kind == 2) {  // unrelated
      f2 = facts[rng.below(facts.size())];
      while (f2.verb == f1.verb) f2 = facts[rng.below(facts.size())];
      score = 1.0;
    }
    const std::string s1 = join_clauses({render_plain(f1)});
    const std::string s2 = join_clauses({render_plain(f2)});
    csts_out << json{{"sent_1", s1},
                     {"sent_2", s2},
                     {"words_1", json::array({f1.verb + "s"})},
                     {"words_2", json::array({f2.verb + "s"})},
                     {"human_score", score}}
                    .dump()
             << '\n';
  }
  csts_out.close();

  // Vocabulary size check for the committed corpus.
  std::set<std::string> vocab;
  {
    std::ifstream in(out_dir + "/synthetic_pairs.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      const json rec = json::parse(line);
      for (const auto& t :
           propenc::tokenize(rec.at("sent_a").get<std::string>()).tokens)
        vocab.insert(t);
      for (const auto& t :
           propenc::tokenize(rec.at("sent_b").get<std::string>()).tokens)
        vocab.insert(t);
    }
  }
  std::cout << "pairs=" << n_pairs << " vocab=" << vocab.size() << '\n';
  return 0;
}
