#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "propenc/binio.hpp"
#include "propenc/errors.hpp"
#include "propenc/mask.hpp"

namespace propenc {

struct PropKey {
  std::uint32_t doc_id = 0;
  std::uint32_t sentence_id = 0;
  std::uint32_t prop_id = 0;

  auto operator<=>(const PropKey&) const = default;
};

// One indexed proposition: key, token mask over its sentence, unit-norm f32
// vector. Masks are stored as a fixed 64-bit bitmap so entries stay
// fixed-width; sentences longer than 64 tokens cannot be indexed.
struct PropEntry {
  PropKey key;
  BinaryMask mask;
  std::vector<float> vector;

  bool operator==(const PropEntry&) const = default;
};

struct ScoredKey {
  PropKey key;
  double score;
};

enum class Level { kProp, kSentence, kDocument };

inline Level level_from_string(const std::string& s) {
  if (s == "prop") return Level::kProp;
  if (s == "sentence") return Level::kSentence;
  if (s == "doc" || s == "document") return Level::kDocument;
  throw DataError("unknown retrieval level: " + s);
}

// Group identity at sentence or document granularity; sent_id is 0 and
// unused at document level.
struct GroupKey {
  std::uint32_t doc_id = 0;
  std::uint32_t sent_id = 0;

  auto operator<=>(const GroupKey&) const = default;
};

struct ScoredGroup {
  GroupKey key;
  double score;
};

inline constexpr char kIndexMagic[4] = {'P', 'I', 'D', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr std::size_t kMaxMaskBits = 64;

// Flat append-only store with exact brute-force top-k cosine search.
class PropIndex {
 public:
  explicit PropIndex(std::uint32_t dim, std::string metadata_json = "{}")
      : dim_(dim), metadata_(std::move(metadata_json)) {
    if (dim_ == 0) throw DataError("index dim must be positive");
  }

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& metadata_json() const { return metadata_; }
  const std::vector<PropEntry>& entries() const { return entries_; }

  void add(PropEntry entry) {
    if (entry.vector.size() != dim_)
      throw DataError("index add: vector dimension mismatch");
    if (entry.mask.size() > kMaxMaskBits)
      throw DataError("index add: mask longer than 64 tokens");
    double norm2 = 0.0;
    for (float v : entry.vector) norm2 += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(norm2) - 1.0) > 1e-6)
      throw DataError("index add: vector is not unit-norm");
    auto [it, inserted] = by_key_.emplace(entry.key, entries_.size());
    if (!inserted) throw DataError("index add: duplicate key");
    entries_.push_back(std::move(entry));
  }

  const PropEntry* find(const PropKey& key) const {
    auto it = by_key_.find(key);
    return it == by_key_.end() ? nullptr : &entries_[it->second];
  }

  // Exact scores over the whole store, descending, ties by key order.
  std::vector<ScoredKey> search_topk(std::span<const double> query,
                                     std::size_t k) const {
    if (query.size() != dim_)
      throw DataError("search: query dimension mismatch");
    std::vector<ScoredKey> scored;
    scored.reserve(entries_.size());
    for (const auto& e : entries_) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim_; ++i)
        s += query[i] * static_cast<double>(e.vector[i]);
      scored.push_back({e.key, s});
    }
    std::sort(scored.begin(), scored.end(),
              [](const ScoredKey& a, const ScoredKey& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.key < b.key;
              });
    scored.resize(std::min(k, scored.size()));
    return scored;
  }

  bool operator==(const PropIndex& other) const {
    return dim_ == other.dim_ && metadata_ == other.metadata_ &&
           entries_ == other.entries_;
  }

 private:
  std::uint32_t dim_;
  std::string metadata_;
  std::vector<PropEntry> entries_;
  std::map<PropKey, std::size_t> by_key_;
};

// Group score = max over member proposition scores; top-k unique groups,
// ordered by score descending then group key. Invariant to input order.
inline std::vector<ScoredGroup> propagate_scores(
    std::span<const ScoredKey> prop_results, Level level, std::size_t k) {
  if (level == Level::kProp)
    throw DataError("propagate_scores: level must be sentence or document");
  std::map<GroupKey, double> best;
  for (const auto& r : prop_results) {
    GroupKey g{r.key.doc_id,
               level == Level::kSentence ? r.key.sentence_id : 0};
    auto it = best.find(g);
    if (it == best.end() || r.score > it->second) best[g] = r.score;
  }
  std::vector<ScoredGroup> out;
  out.reserve(best.size());
  for (const auto& [g, s] : best) out.push_back({g, s});
  std::sort(out.begin(), out.end(),
            [](const ScoredGroup& a, const ScoredGroup& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.key < b.key;
            });
  out.resize(std::min(k, out.size()));
  return out;
}

// Sentence/document search: over-retrieve propositions (factor-of-k start,
// doubling until k unique groups or the whole store is ranked), then
// propagate. Equals the brute-force group-max ranking exactly.
inline std::vector<ScoredGroup> search_grouped(const PropIndex& index,
                                               std::span<const double> query,
                                               std::size_t k, Level level,
                                               std::size_t over_retrieval = 5) {
  std::size_t fetch = std::max<std::size_t>(1, over_retrieval) * std::max<std::size_t>(1, k);
  for (;;) {
    fetch = std::min(fetch, index.size());
    auto props = index.search_topk(query, fetch);
    auto groups = propagate_scores(props, level, k);
    if (groups.size() >= k || fetch >= index.size()) return groups;
    fetch *= 2;
  }
}

// d_full / d_bottleneck, the index-size reduction from training with a
// smaller output dimension.
inline double compression_ratio(std::size_t d_full, std::size_t d_bottleneck) {
  if (d_bottleneck == 0) throw DataError("compression_ratio: zero divisor");
  if (d_full == 0) throw DataError("compression_ratio: d_full must be >= 1");
  return static_cast<double>(d_full) / static_cast<double>(d_bottleneck);
}

// ---- on-disk format -------------------------------------------------------
//
//   magic "PIDX" | version u32 | dim u32 | count u64 | metadata JSON string
//   (u32 length + bytes) | count entries. Entry: doc_id u32, sentence_id
//   u32, prop_id u32, mask_len u32, mask bits u64 (bit i = token i), vector
//   dim x f32. Little-endian; every entry is 24 + 4*dim bytes.

inline constexpr std::size_t kIndexEntryKeyBytes = 24;

inline std::size_t index_file_bytes(std::size_t count, std::size_t dim,
                                    std::size_t metadata_bytes) {
  const std::size_t header = 4 + 4 + 4 + 8 + 4 + metadata_bytes;
  return header + count * (kIndexEntryKeyBytes + 4 * dim);
}

inline void save_index(const PropIndex& index, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open index for writing: " + path);
  os.write(kIndexMagic, 4);
  write_u32(os, kIndexVersion);
  write_u32(os, index.dim());
  write_u64(os, index.size());
  write_string(os, index.metadata_json());
  for (const auto& e : index.entries()) {
    write_u32(os, e.key.doc_id);
    write_u32(os, e.key.sentence_id);
    write_u32(os, e.key.prop_id);
    write_u32(os, static_cast<std::uint32_t>(e.mask.size()));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < e.mask.size(); ++i)
      if (e.mask[i]) bits |= (std::uint64_t{1} << i);
    write_u64(os, bits);
    for (float v : e.vector) write_f32(os, v);
  }
  if (!os) throw DataError("index write failed: " + path);
}

inline PropIndex load_index(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open index: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kIndexMagic, 4) != 0)
    throw DataError("bad index magic: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kIndexVersion)
    throw DataError("unsupported index version " + std::to_string(version));
  const std::uint32_t dim = read_u32(is);
  const std::uint64_t count = read_u64(is);
  PropIndex index(dim, read_string(is));
  for (std::uint64_t n = 0; n < count; ++n) {
    PropEntry e;
    e.key.doc_id = read_u32(is);
    e.key.sentence_id = read_u32(is);
    e.key.prop_id = read_u32(is);
    const std::uint32_t mask_len = read_u32(is);
    if (mask_len > kMaxMaskBits) throw DataError("corrupt index: mask length");
    const std::uint64_t bits = read_u64(is);
    e.mask.resize(mask_len);
    for (std::uint32_t i = 0; i < mask_len; ++i)
      e.mask[i] = (bits >> i) & 1u;
    e.vector.resize(dim);
    for (auto& v : e.vector) v = read_f32(is);
    index.add(std::move(e));
  }
  // Trailing data means the file does not match its declared count.
  is.peek();
  if (!is.eof()) throw DataError("index file has trailing bytes: " + path);
  return index;
}

}  // namespace propenc
