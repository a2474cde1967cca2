#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "propenc/errors.hpp"

namespace propenc {

// A tokenized string with byte offsets back into the raw text, so that
// raw.substr(start, end - start) reproduces each token exactly.
struct TokenizedText {
  std::string raw;
  std::vector<std::string> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  std::size_t size() const { return tokens.size(); }
};

namespace detail {

inline bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

// ASCII punctuation splits into single-character tokens. Bytes outside
// ASCII are treated as word characters, which keeps UTF-8 sequences intact.
inline bool is_punct_byte(unsigned char c) {
  return c < 0x80 && std::ispunct(c) != 0;
}

}  // namespace detail

// Whitespace split with punctuation characters broken out as their own
// tokens. Empty input gives an empty token list.
inline TokenizedText tokenize(std::string_view text) {
  TokenizedText out;
  out.raw = std::string(text);
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (detail::is_space_byte(c)) {
      ++i;
      continue;
    }
    if (detail::is_punct_byte(c)) {
      out.tokens.emplace_back(1, text[i]);
      out.offsets.emplace_back(i, i + 1);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n) {
      const unsigned char cj = static_cast<unsigned char>(text[j]);
      if (detail::is_space_byte(cj) || detail::is_punct_byte(cj)) break;
      ++j;
    }
    out.tokens.emplace_back(text.substr(i, j - i));
    out.offsets.emplace_back(i, j);
    i = j;
  }
  return out;
}

// Lemma-lite normalization: ASCII lowercase, then strip trailing
// inflectional suffixes ('s, s, es, ed, ing) while the remaining stem keeps
// at least 3 characters. Stripping iterates to a fixed point so the
// function is idempotent.
inline std::string normalize_token(std::string_view token) {
  std::string t(token);
  for (char& c : t)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  // Longest suffix first; the length-2 endings are mutually exclusive.
  static constexpr std::string_view kSuffixes[] = {"ing", "'s", "es", "ed",
                                                   "s"};
  bool stripped = true;
  while (stripped) {
    stripped = false;
    for (std::string_view suf : kSuffixes) {
      if (t.size() >= suf.size() + 3 && t.ends_with(suf)) {
        t.resize(t.size() - suf.size());
        stripped = true;
        break;
      }
    }
  }
  return t;
}

// Pluggable normalizer hook; the default is normalize_token above.
using TokenNormalizer = std::string (*)(std::string_view);

// Token-id vocabulary with reserved PAD=0 and UNK=1.
class Vocab {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kUnk = 1;

  Vocab() : id_to_token_{"<pad>", "<unk>"} {}

  explicit Vocab(std::vector<std::string> tokens) : Vocab() {
    for (auto& t : tokens) add(std::move(t));
  }

  std::uint32_t add(std::string token) {
    auto [it, inserted] =
        token_to_id_.emplace(token, static_cast<std::uint32_t>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(std::move(token));
    return it->second;
  }

  std::uint32_t id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(std::uint32_t id) const { return id_to_token_[id]; }
  std::size_t size() const { return id_to_token_.size(); }

  // Non-reserved tokens in id order.
  std::vector<std::string> entries() const {
    return {id_to_token_.begin() + 2, id_to_token_.end()};
  }

  std::vector<std::uint32_t> encode(const TokenizedText& text) const {
    std::vector<std::uint32_t> ids;
    ids.reserve(text.tokens.size());
    for (const auto& t : text.tokens) ids.push_back(id(t));
    return ids;
  }

 private:
  std::map<std::string, std::uint32_t, std::less<>> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Ids assigned by frequency (descending), ties broken lexicographically;
// tokens under min_count map to UNK. Independent of corpus document order.
inline Vocab build_vocab(const std::vector<TokenizedText>& corpus,
                         std::size_t min_count = 1) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& t : doc.tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, cnt] : counts)
    if (cnt >= min_count) kept.emplace_back(tok, cnt);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, cnt] : kept) v.add(tok);
  return v;
}

}  // namespace propenc
