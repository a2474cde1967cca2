#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "propenc/alignment.hpp"
#include "propenc/config.hpp"
#include "propenc/encoder.hpp"
#include "propenc/errors.hpp"
#include "propenc/eval.hpp"
#include "propenc/index.hpp"
#include "propenc/jsonl.hpp"
#include "propenc/nli_client.hpp"
#include "propenc/pairing.hpp"
#include "propenc/tokenizer.hpp"
#include "propenc/trainer.hpp"

namespace propenc::cli {

// All stage outputs start with a {"_meta": {...}} line carrying the config
// hash, so any artifact can be traced back to the configuration that
// produced it.
inline Json meta_line(const RunConfig& cfg, Json extra = Json::object()) {
  extra["config_hash"] = cfg.hash();
  return Json{{"_meta", extra}};
}

inline bool is_meta(const Json& j) { return j.contains("_meta"); }

namespace detail {

inline std::string require_string(const Json& j, const char* field,
                                  const std::string& where) {
  if (!j.contains(field) || !j.at(field).is_string())
    throw DataError(where + ": missing string field '" + field + "'");
  return j.at(field).get<std::string>();
}

inline std::vector<std::string> require_string_array(const Json& j,
                                                     const char* field,
                                                     const std::string& where) {
  if (!j.contains(field) || !j.at(field).is_array())
    throw DataError(where + ": missing array field '" + field + "'");
  std::vector<std::string> out;
  for (const auto& v : j.at(field)) {
    if (!v.is_string())
      throw DataError(where + ": '" + field + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::vector<BinaryMask> masks_field(const Json& j, const char* field,
                                           const std::string& where) {
  std::vector<BinaryMask> out;
  for (const auto& m : j.at(field)) out.push_back(mask_from_json(m, where));
  return out;
}

inline std::string loc(const std::string& path, std::size_t lineno) {
  return path + ":" + std::to_string(lineno);
}

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (is.read(buf, sizeof buf) || is.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace detail

// ---- align ----------------------------------------------------------------

struct AlignStats {
  std::size_t records = 0;
  std::size_t propositions = 0;
  std::size_t dropped = 0;
};

// Adds token masks to pair records ({sent_a, sent_b, props_a, props_b}) or
// corpus records ({doc_id, sent_id, text, props}). Unalignable propositions
// are dropped from the record and counted.
inline AlignStats cmd_align(const std::string& in, const std::string& out,
                            const RunConfig& cfg) {
  AlignConfig align_cfg{cfg.window, cfg.align_eps, &normalize_token};
  AlignStats stats;
  JsonlWriter writer(out);
  writer.write(meta_line(cfg, {{"stage", "align"}}));

  auto align_side = [&](const std::string& text,
                        std::vector<std::string>& props, Json& rec,
                        const char* masks_field_name,
                        const char* props_field_name,
                        const std::string& where) {
    const TokenizedText sent = tokenize(text);
    Json masks = Json::array();
    Json kept = Json::array();
    for (const auto& p : props) {
      ++stats.propositions;
      try {
        masks.push_back(mask_to_json(proposition_to_mask(p, sent, align_cfg)));
        kept.push_back(p);
      } catch (const DataError&) {
        ++stats.dropped;
        std::cerr << "warning: " << where << ": dropped unalignable proposition: "
                  << p << '\n';
      }
    }
    rec[props_field_name] = std::move(kept);
    rec[masks_field_name] = std::move(masks);
  };

  for_each_jsonl(in, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(in, lineno);
    ++stats.records;
    if (rec.contains("sent_a")) {
      auto props_a = detail::require_string_array(rec, "props_a", where);
      auto props_b = detail::require_string_array(rec, "props_b", where);
      align_side(detail::require_string(rec, "sent_a", where), props_a, rec,
                 "masks_a", "props_a", where);
      align_side(detail::require_string(rec, "sent_b", where), props_b, rec,
                 "masks_b", "props_b", where);
    } else if (rec.contains("text")) {
      auto props = detail::require_string_array(rec, "props", where);
      align_side(detail::require_string(rec, "text", where), props, rec,
                 "masks", "props", where);
    } else {
      throw DataError(where + ": record is neither a sentence pair nor a corpus entry");
    }
    writer.write(rec);
  });
  writer.close();
  return stats;
}

// ---- pair -----------------------------------------------------------------

inline std::unique_ptr<EntailmentOracle> make_oracle(const RunConfig& cfg) {
  if (cfg.oracle == "lexical")
    return std::make_unique<LexicalEquivalenceOracle>(cfg.oracle_threshold);
  if (cfg.oracle.rfind("pipe:", 0) == 0) {
    std::vector<std::string> argv;
    std::istringstream is(cfg.oracle.substr(5));
    std::string word;
    while (is >> word) argv.push_back(word);
    return std::make_unique<PipeOracle>(argv);
  }
  throw UsageError("unknown oracle: " + cfg.oracle +
                   " (expected 'lexical' or 'pipe:<command>')");
}

struct PairStats {
  std::size_t records_in = 0;
  std::size_t records_out = 0;
  std::size_t positive_links = 0;
};

// Labels positive proposition pairs on aligned pair records. Records without
// any positive pair are dropped when require_positive is set.
inline PairStats cmd_pair(const std::string& in, const std::string& out,
                          const RunConfig& cfg) {
  auto oracle = make_oracle(cfg);
  PairStats stats;
  JsonlWriter writer(out);
  writer.write(meta_line(cfg, {{"stage", "pair"}}));

  for_each_jsonl(in, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(in, lineno);
    ++stats.records_in;
    if (!rec.contains("masks_a") || !rec.contains("masks_b"))
      throw DataError(where + ": record has no masks; run align first");
    SentencePair pair;
    pair.sent_a = tokenize(detail::require_string(rec, "sent_a", where));
    pair.sent_b = tokenize(detail::require_string(rec, "sent_b", where));
    const auto props_a = detail::require_string_array(rec, "props_a", where);
    const auto props_b = detail::require_string_array(rec, "props_b", where);
    const auto masks_a = detail::masks_field(rec, "masks_a", where);
    const auto masks_b = detail::masks_field(rec, "masks_b", where);
    if (masks_a.size() != props_a.size() || masks_b.size() != props_b.size())
      throw DataError(where + ": props/masks length mismatch");
    for (std::size_t i = 0; i < props_a.size(); ++i)
      pair.props_a.push_back({props_a[i], masks_a[i]});
    for (std::size_t i = 0; i < props_b.size(); ++i)
      pair.props_b.push_back({props_b[i], masks_b[i]});

    const PositivePairSet positives = label_positive_pairs(pair, *oracle);
    if (cfg.require_positive && positives.empty()) return;
    Json plist = Json::array();
    for (const auto& [i, j] : positives.pairs)
      plist.push_back(Json::array({i, j}));
    rec["positives"] = std::move(plist);
    stats.positive_links += positives.pairs.size();
    ++stats.records_out;
    writer.write(rec);
  });
  writer.close();
  return stats;
}

// ---- shared loading ---------------------------------------------------------

// Paired records -> in-memory corpus for the trainer.
inline std::vector<LabeledPair> load_labeled_pairs(const std::string& path) {
  std::vector<LabeledPair> corpus;
  for_each_jsonl(path, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(path, lineno);
    if (!rec.contains("positives"))
      throw DataError(where + ": record has no positive labels; run pair first");
    LabeledPair lp;
    lp.pair.sent_a = tokenize(detail::require_string(rec, "sent_a", where));
    lp.pair.sent_b = tokenize(detail::require_string(rec, "sent_b", where));
    const auto props_a = detail::require_string_array(rec, "props_a", where);
    const auto props_b = detail::require_string_array(rec, "props_b", where);
    const auto masks_a = detail::masks_field(rec, "masks_a", where);
    const auto masks_b = detail::masks_field(rec, "masks_b", where);
    for (std::size_t i = 0; i < props_a.size(); ++i) {
      if (masks_a[i].size() != lp.pair.sent_a.size())
        throw DataError(where + ": mask_a length mismatch");
      lp.pair.props_a.push_back({props_a[i], masks_a[i]});
    }
    for (std::size_t i = 0; i < props_b.size(); ++i) {
      if (masks_b[i].size() != lp.pair.sent_b.size())
        throw DataError(where + ": mask_b length mismatch");
      lp.pair.props_b.push_back({props_b[i], masks_b[i]});
    }
    for (const auto& pj : rec.at("positives")) {
      if (!pj.is_array() || pj.size() != 2)
        throw DataError(where + ": positives entries must be [i, j]");
      const std::size_t i = pj[0].get<std::size_t>();
      const std::size_t j = pj[1].get<std::size_t>();
      if (i >= lp.pair.props_a.size() || j >= lp.pair.props_b.size())
        throw DataError(where + ": positive index out of range");
      lp.positives.pairs.insert({i, j});
    }
    corpus.push_back(std::move(lp));
  });
  if (corpus.empty()) throw DataError(path + ": no records");
  return corpus;
}

inline Vocab vocab_from_pairs(const std::vector<LabeledPair>& corpus,
                              std::size_t min_count) {
  std::vector<TokenizedText> texts;
  for (const auto& lp : corpus) {
    texts.push_back(lp.pair.sent_a);
    texts.push_back(lp.pair.sent_b);
  }
  return build_vocab(texts, min_count);
}

// ---- train ------------------------------------------------------------------

struct TrainOutput {
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  bool diverged = false;
};

inline TrainOutput cmd_train(const std::string& data,
                             const std::string& checkpoint_out,
                             const std::string& log_out,
                             const RunConfig& cfg) {
  const auto corpus = load_labeled_pairs(data);
  const Vocab vocab = vocab_from_pairs(corpus, cfg.min_count);
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    if (corpus[r].pair.sent_a.size() > cfg.max_len ||
        corpus[r].pair.sent_b.size() > cfg.max_len)
      throw DataError(data + ": record " + std::to_string(r) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  }

  const EncoderConfig enc_cfg =
      cfg.encoder_config(static_cast<std::uint32_t>(vocab.size()));
  const TrainResult result = train(corpus, vocab, enc_cfg, cfg.train_config());

  JsonlWriter log(log_out);
  log.write(meta_line(cfg, {{"stage", "train"}}));
  for (const auto& e : result.history)
    log.write(Json{{"epoch", e.epoch},
                   {"lr", e.lr},
                   {"train_loss", e.train_loss},
                   {"val_loss", e.val_loss}});
  log.close();

  Json meta{{"config_hash", cfg.hash()},
            {"vocab", vocab.entries()},
            {"best_epoch", result.best.epoch},
            {"val_loss", result.best.val_loss}};
  save_checkpoint(result.best.params, checkpoint_out, meta.dump());

  TrainOutput out;
  out.best_epoch = result.best.epoch;
  out.best_val_loss = result.best.val_loss;
  out.diverged = result.diverged;
  if (!result.history.empty()) {
    out.initial_train_loss = result.history.front().train_loss;
    out.final_train_loss = result.history.back().train_loss;
  }
  return out;
}

// ---- encode -----------------------------------------------------------------

struct LoadedModel {
  EncoderParams params;
  Vocab vocab;
  std::string metadata_json;
  std::string checkpoint_hash;
};

inline LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  Json meta = Json::parse(ck.metadata_json);
  if (!meta.contains("vocab") || !meta.at("vocab").is_array())
    throw DataError(checkpoint_path + ": checkpoint metadata has no vocab");
  std::vector<std::string> tokens;
  for (const auto& t : meta.at("vocab")) tokens.push_back(t.get<std::string>());
  LoadedModel m{std::move(ck.params), Vocab(std::move(tokens)),
                std::move(ck.metadata_json),
                detail::hex64(detail::file_hash(checkpoint_path))};
  if (m.vocab.size() != m.params.config.vocab_size)
    throw DataError(checkpoint_path + ": vocab size does not match config");
  return m;
}

// Encodes aligned corpus records into an embeddings JSONL file (f32 values).
inline std::size_t cmd_encode(const std::string& checkpoint_path,
                              const std::string& in, const std::string& out,
                              const RunConfig& cfg) {
  const LoadedModel model = load_model(checkpoint_path);
  JsonlWriter writer(out);
  writer.write(meta_line(
      cfg, {{"stage", "encode"},
            {"dim", model.params.config.d_out},
            {"checkpoint_hash", model.checkpoint_hash}}));
  std::size_t emitted = 0;
  for_each_jsonl(in, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(in, lineno);
    if (!rec.contains("masks"))
      throw DataError(where + ": record has no masks; run align first");
    const std::uint32_t doc_id = rec.value("doc_id", 0u);
    const std::uint32_t sent_id = rec.value("sent_id", 0u);
    const TokenizedText sent =
        tokenize(detail::require_string(rec, "text", where));
    if (sent.size() > model.params.config.max_len)
      throw DataError(where + ": sentence exceeds max_len");
    const auto masks = detail::masks_field(rec, "masks", where);
    if (masks.empty()) return;
    for (const auto& m : masks)
      if (m.size() != sent.size())
        throw DataError(where + ": mask length does not match sentence");
    const auto ids = model.vocab.encode(sent);
    const auto embs = encode_propositions(model.params, ids, masks);
    for (std::size_t p = 0; p < embs.size(); ++p) {
      Json vec = Json::array();
      for (double v : embs[p])
        vec.push_back(static_cast<double>(static_cast<float>(v)));
      writer.write(Json{{"doc_id", doc_id},
                        {"sent_id", sent_id},
                        {"prop_id", p},
                        {"mask", mask_to_json(masks[p])},
                        {"vector", std::move(vec)}});
      ++emitted;
    }
  });
  writer.close();
  return emitted;
}

// ---- index ------------------------------------------------------------------

inline std::size_t cmd_index(const std::string& in, const std::string& out,
                             const std::string& corpus_name,
                             const RunConfig& cfg) {
  std::optional<PropIndex> index;
  std::string checkpoint_hash;
  for_each_jsonl(in, [&](std::size_t lineno, Json& rec) {
    const std::string where = detail::loc(in, lineno);
    if (is_meta(rec)) {
      const Json& m = rec.at("_meta");
      if (m.contains("checkpoint_hash"))
        checkpoint_hash = m.at("checkpoint_hash").get<std::string>();
      return;
    }
    if (!rec.contains("vector"))
      throw DataError(where + ": missing 'vector'");
    PropEntry e;
    e.key = {rec.value("doc_id", 0u), rec.value("sent_id", 0u),
             rec.value("prop_id", 0u)};
    e.mask = mask_from_json(rec.at("mask"), where);
    for (const auto& v : rec.at("vector"))
      e.vector.push_back(static_cast<float>(v.get<double>()));
    if (!index) {
      Json meta{{"corpus", corpus_name},
                {"checkpoint_hash", checkpoint_hash},
                {"config_hash", cfg.hash()}};
      index.emplace(static_cast<std::uint32_t>(e.vector.size()), meta.dump());
    }
    try {
      index->add(std::move(e));
    } catch (const DataError& err) {
      throw DataError(where + ": " + err.what());
    }
  });
  if (!index) throw DataError(in + ": no embedding records");
  save_index(*index, out);
  return index->size();
}

// ---- search -----------------------------------------------------------------

struct Query {
  std::string query_id;
  std::string text;
  std::optional<std::string> prop;
  std::optional<BinaryMask> mask;
};

inline std::vector<Query> load_queries(const std::string& path) {
  std::vector<Query> out;
  for_each_jsonl(path, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(path, lineno);
    Query q;
    q.query_id = rec.contains("query_id")
                     ? rec.at("query_id").is_string()
                           ? rec.at("query_id").get<std::string>()
                           : std::to_string(rec.at("query_id").get<long long>())
                     : "q" + std::to_string(out.size());
    q.text = detail::require_string(rec, "text", where);
    if (rec.contains("prop")) q.prop = rec.at("prop").get<std::string>();
    if (rec.contains("mask")) q.mask = mask_from_json(rec.at("mask"), where);
    if (!q.prop && !q.mask)
      throw DataError(where + ": query needs 'prop' text or a 'mask'");
    out.push_back(std::move(q));
  });
  if (out.empty()) throw DataError(path + ": no queries");
  return out;
}

inline std::vector<double> query_vector(const LoadedModel& model,
                                        const Query& q,
                                        const RunConfig& cfg) {
  const TokenizedText sent = tokenize(q.text);
  BinaryMask mask;
  if (q.mask) {
    mask = *q.mask;
    if (mask.size() != sent.size())
      throw DataError("query " + q.query_id + ": mask length mismatch");
  } else {
    AlignConfig acfg{cfg.window, cfg.align_eps, &normalize_token};
    mask = proposition_to_mask(*q.prop, sent, acfg);
  }
  const auto ids = model.vocab.encode(sent);
  return encode_propositions(model.params, ids, {mask})[0];
}

inline void cmd_search(const std::string& index_path,
                       const std::string& checkpoint_path,
                       const std::vector<Query>& queries, std::size_t k,
                       Level level, const std::string& out,
                       const RunConfig& cfg) {
  if (k < 1) throw UsageError("k must be >= 1");
  const PropIndex index = load_index(index_path);
  const LoadedModel model = load_model(checkpoint_path);
  if (model.params.config.d_out != index.dim())
    throw DataError("checkpoint d_out does not match index dim");

  JsonlWriter writer(out);
  writer.write(meta_line(cfg, {{"stage", "search"}}));
  for (const auto& q : queries) {
    const auto qv = query_vector(model, q, cfg);
    Json results = Json::array();
    const char* level_name = "prop";
    if (level == Level::kProp) {
      for (const auto& r : index.search_topk(qv, k))
        results.push_back(Json{{"doc_id", r.key.doc_id},
                               {"sent_id", r.key.sentence_id},
                               {"prop_id", r.key.prop_id},
                               {"score", r.score}});
    } else {
      level_name = level == Level::kSentence ? "sentence" : "doc";
      for (const auto& g :
           search_grouped(index, qv, k, level, cfg.over_retrieval)) {
        Json row{{"doc_id", g.key.doc_id}, {"score", g.score}};
        if (level == Level::kSentence) row["sent_id"] = g.key.sent_id;
        results.push_back(std::move(row));
      }
    }
    writer.write(Json{{"query_id", q.query_id},
                      {"level", level_name},
                      {"results", std::move(results)}});
  }
  writer.close();
}

// ---- eval -------------------------------------------------------------------

inline PropKey key_from_json(const Json& rec) {
  return {rec.value("doc_id", 0u), rec.value("sent_id", 0u),
          rec.value("prop_id", 0u)};
}

inline void write_metrics(const MetricsReport& report, const std::string& out,
                          const RunConfig& cfg) {
  Json j{{"p_at_1", nullptr},
         {"r_at_5", nullptr},
         {"r_at_10", nullptr},
         {"r_at_20", nullptr},
         {"spearman", nullptr},
         {"config_hash", cfg.hash()}};
  if (report.has_retrieval) {
    j["p_at_1"] = report.p_at_1;
    j["r_at_5"] = report.r_at_5;
    j["r_at_10"] = report.r_at_10;
    j["r_at_20"] = report.r_at_20;
  }
  if (report.has_spearman) j["spearman"] = report.spearman_r;
  if (out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(out);
  if (!os) throw DataError("cannot open " + out + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw DataError("write failed: " + out);
}

inline MetricsReport cmd_eval_retrieval(const std::string& results_path,
                                        const std::string& truth_path) {
  Rankings rankings;
  for_each_jsonl(results_path, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(results_path, lineno);
    const std::string qid = detail::require_string(rec, "query_id", where);
    std::vector<PropKey> ranked;
    for (const auto& r : rec.at("results"))
      ranked.push_back(key_from_json(r));
    rankings[qid] = std::move(ranked);
  });
  GroundTruth truth;
  for_each_jsonl(truth_path, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(truth_path, lineno);
    const std::string qid = detail::require_string(rec, "query_id", where);
    if (!rec.contains("relevant") || !rec.at("relevant").is_array())
      throw DataError(where + ": missing 'relevant' array");
    for (const auto& r : rec.at("relevant")) {
      PropKey key{};
      if (r.is_array()) {
        if (r.empty() || r.size() > 3)
          throw DataError(where + ": relevant keys take 1-3 components");
        key.doc_id = r[0].get<std::uint32_t>();
        if (r.size() > 1) key.sentence_id = r[1].get<std::uint32_t>();
        if (r.size() > 2) key.prop_id = r[2].get<std::uint32_t>();
      } else {
        key = key_from_json(r);
      }
      truth[qid].insert(key);
    }
  });
  return retrieval_metrics(rankings, truth);
}

inline MetricsReport cmd_eval_csts(const std::string& instances_path,
                                   const std::string& checkpoint_path) {
  const LoadedModel model = load_model(checkpoint_path);
  std::vector<double> pred, human;
  for_each_jsonl(instances_path, [&](std::size_t lineno, Json& rec) {
    if (is_meta(rec)) return;
    const std::string where = detail::loc(instances_path, lineno);
    ConditionalInstance inst;
    inst.sentence_1 = tokenize(detail::require_string(rec, "sent_1", where));
    inst.sentence_2 = tokenize(detail::require_string(rec, "sent_2", where));
    auto side_mask = [&](const char* mask_field, const char* words_field,
                         const TokenizedText& sent) -> BinaryMask {
      if (rec.contains(mask_field))
        return mask_from_json(rec.at(mask_field), where);
      if (rec.contains(words_field)) {
        // Mark every sentence token whose normalized form matches one of
        // the condition words.
        std::set<std::string> want;
        for (const auto& w : rec.at(words_field))
          want.insert(normalize_token(w.get<std::string>()));
        BinaryMask m(sent.size(), 0);
        for (std::size_t i = 0; i < sent.size(); ++i)
          if (want.count(normalize_token(sent.tokens[i]))) m[i] = 1;
        if (popcount(m) == 0)
          throw DataError(where + ": no condition word found in sentence");
        return m;
      }
      throw DataError(where + ": need '" + mask_field + "' or '" +
                      words_field + "'");
    };
    inst.mask_1 = side_mask("mask_1", "words_1", inst.sentence_1);
    inst.mask_2 = side_mask("mask_2", "words_2", inst.sentence_2);
    if (inst.mask_1.size() != inst.sentence_1.size() ||
        inst.mask_2.size() != inst.sentence_2.size())
      throw DataError(where + ": mask length mismatch");
    if (!rec.contains("human_score"))
      throw DataError(where + ": missing 'human_score'");
    inst.human_score = rec.at("human_score").get<double>();
    pred.push_back(conditional_similarity(model.params, model.vocab, inst));
    human.push_back(inst.human_score);
  });
  MetricsReport report;
  report.spearman_r = spearman(pred, human);
  report.has_spearman = true;
  return report;
}

}  // namespace propenc::cli
