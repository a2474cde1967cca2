#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "propenc/autodiff.hpp"
#include "propenc/binio.hpp"
#include "propenc/errors.hpp"
#include "propenc/mask.hpp"
#include "propenc/rng.hpp"
#include "propenc/tensor.hpp"

namespace propenc {

enum class PoolingStrategy : std::uint32_t {
  kMaskPoolingOnly = 0,  // full attention, mask applied at pooling
  kFullMask = 1,         // mask applied as attention mask and pooling mask
  kTokenSubsetOnly = 2,  // masked tokens re-encoded as their own sequence
};

inline const char* to_string(PoolingStrategy s) {
  switch (s) {
    case PoolingStrategy::kMaskPoolingOnly: return "mask_pooling_only";
    case PoolingStrategy::kFullMask: return "full_mask";
    case PoolingStrategy::kTokenSubsetOnly: return "token_subset_only";
  }
  return "?";
}

inline PoolingStrategy pooling_from_string(const std::string& s) {
  if (s == "mask_pooling_only") return PoolingStrategy::kMaskPoolingOnly;
  if (s == "full_mask") return PoolingStrategy::kFullMask;
  if (s == "token_subset_only") return PoolingStrategy::kTokenSubsetOnly;
  throw DataError("unknown pooling strategy: " + s);
}

struct EncoderConfig {
  std::uint32_t vocab_size = 0;
  std::uint32_t d_model = 64;
  std::uint32_t n_heads = 2;
  std::uint32_t n_layers = 2;
  std::uint32_t ffn_mult = 4;
  std::uint32_t max_len = 64;
  std::uint32_t d_out = 64;
  PoolingStrategy pooling = PoolingStrategy::kMaskPoolingOnly;

  void validate() const {
    if (vocab_size < 2) throw DataError("vocab_size must cover PAD and UNK");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw DataError("d_model must be a positive multiple of n_heads");
    if (d_out < 1) throw DataError("d_out must be >= 1");
    if (n_layers == 0 || ffn_mult == 0 || max_len == 0)
      throw DataError("n_layers, ffn_mult, max_len must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

// All trainable weights. visit() fixes the canonical parameter order used by
// the optimizer, gradients, finite differences and the checkpoint format.
struct EncoderParams {
  EncoderConfig config;

  Tensor token_embed;  // vocab x d
  Tensor pos_embed;    // max_len x d
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;  // d x (d*ffn_mult), then back down
  };
  std::vector<Layer> layers;
  Tensor lnf_g, lnf_b;
  Tensor proj_w1, proj_b1;  // d x d
  Tensor proj_w2, proj_b2;  // d x d_out

  template <typename F>
  void visit(F&& fn) {
    fn("token_embed", token_embed);
    fn("pos_embed", pos_embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& L = layers[l];
      fn(p + "wq", L.wq); fn(p + "bq", L.bq);
      fn(p + "wk", L.wk); fn(p + "bk", L.bk);
      fn(p + "wv", L.wv); fn(p + "bv", L.bv);
      fn(p + "wo", L.wo); fn(p + "bo", L.bo);
      fn(p + "ln1_g", L.ln1_g); fn(p + "ln1_b", L.ln1_b);
      fn(p + "ln2_g", L.ln2_g); fn(p + "ln2_b", L.ln2_b);
      fn(p + "w1", L.w1); fn(p + "b1", L.b1);
      fn(p + "w2", L.w2); fn(p + "b2", L.b2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    fn("proj_w1", proj_w1); fn("proj_b1", proj_b1);
    fn("proj_w2", proj_w2); fn("proj_b2", proj_b2);
  }

  template <typename F>
  void visit(F&& fn) const {
    const_cast<EncoderParams*>(this)->visit(
        [&](const std::string& name, Tensor& t) {
          fn(name, static_cast<const Tensor&>(t));
        });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    visit([&](const std::string&, const Tensor& t) {
      out.insert(out.end(), t.data().begin(), t.data().end());
    });
    return out;
  }

  void unflatten(std::span<const double> flat) {
    std::size_t off = 0;
    visit([&](const std::string&, Tensor& t) {
      if (off + t.size() > flat.size())
        throw ShapeError("unflatten: parameter vector too short");
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()),
                t.data().begin());
      off += t.size();
    });
    if (off != flat.size())
      throw ShapeError("unflatten: parameter vector too long");
  }
};

// Per-parameter gradient tensors in canonical visit() order.
struct Gradient {
  std::vector<std::string> names;
  std::vector<Tensor> parts;

  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto& t : parts)
      out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
  }
};

// Random initialization: N(0, 0.02) weights, unit layer-norm gains, zero
// biases, in one fixed draw order.
inline EncoderParams init_params(EncoderConfig config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t f = d * config.ffn_mult;

  auto weights = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
    return t;
  };
  auto zeros = [&](std::size_t n) { return Tensor({std::size_t{1}, n}); };
  auto ones = [&](std::size_t n) {
    Tensor t({std::size_t{1}, n});
    t.fill(1.0);
    return t;
  };

  p.token_embed = weights(config.vocab_size, d);
  p.pos_embed = weights(config.max_len, d);
  p.layers.resize(config.n_layers);
  for (auto& L : p.layers) {
    L.wq = weights(d, d); L.bq = zeros(d);
    L.wk = weights(d, d); L.bk = zeros(d);
    L.wv = weights(d, d); L.bv = zeros(d);
    L.wo = weights(d, d); L.bo = zeros(d);
    L.ln1_g = ones(d); L.ln1_b = zeros(d);
    L.ln2_g = ones(d); L.ln2_b = zeros(d);
    L.w1 = weights(d, f); L.b1 = zeros(f);
    L.w2 = weights(f, d); L.b2 = zeros(d);
  }
  p.lnf_g = ones(d);
  p.lnf_b = zeros(d);
  p.proj_w1 = weights(d, d);
  p.proj_b1 = zeros(d);
  p.proj_w2 = weights(d, config.d_out);
  p.proj_b2 = zeros(config.d_out);
  return p;
}

// Unit-norm embedding of one proposition.
using PropositionEmbedding = std::vector<double>;

// One forward computation graph over a shared parameter set. Several
// sentences may be encoded on the same graph; backward() then accumulates
// parameter gradients across all of them.
class EncoderGraph {
 public:
  explicit EncoderGraph(const EncoderParams& params) : params_(params) {
    params_.visit([&](const std::string& name, const Tensor& t) {
      param_names_.push_back(name);
      param_vars_.push_back(tape_.leaf(t));
    });
  }

  Tape& tape() { return tape_; }
  std::size_t encode_calls() const { return encode_calls_; }

  // Pre-layer-norm transformer stack with full bidirectional attention.
  // attn_allowed, when given, restricts which key positions are attended to.
  Tape::Var encode_tokens(std::span<const std::uint32_t> ids,
                          const BinaryMask* attn_allowed = nullptr) {
    const auto& cfg = params_.config;
    if (ids.empty()) throw DataError("encode_tokens: empty input");
    if (ids.size() > cfg.max_len)
      throw DataError("encode_tokens: input longer than max_len");
    for (auto id : ids)
      if (id >= cfg.vocab_size)
        throw DataError("encode_tokens: token id out of range");
    ++encode_calls_;

    const std::size_t len = ids.size();
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;

    std::vector<std::size_t> rows(ids.begin(), ids.end());
    Tape::Var x = tape_.add(tape_.gather_rows(pv("token_embed"), rows),
                            tape_.slice_rows(pv("pos_embed"), 0, len));

    Tape::Var attn_bias = 0;
    bool has_bias = false;
    if (attn_allowed != nullptr) {
      if (attn_allowed->size() != len)
        throw ShapeError("attention mask length mismatch");
      if (popcount(*attn_allowed) == 0) throw DataError("empty mask");
      Tensor bias({len, len});
      for (std::size_t q = 0; q < len; ++q)
        for (std::size_t k = 0; k < len; ++k)
          bias.at(q, k) = (*attn_allowed)[k] ? 0.0 : -1e9;
      attn_bias = tape_.leaf(std::move(bias));
      has_bias = true;
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Tape::Var a_in = tape_.layer_norm_op(x, pv(p + "ln1_g"), pv(p + "ln1_b"));
      Tape::Var q = linear(a_in, p + "wq", p + "bq");
      Tape::Var k = linear(a_in, p + "wk", p + "bk");
      Tape::Var v = linear(a_in, p + "wv", p + "bv");
      std::vector<Tape::Var> heads;
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        Tape::Var qh = tape_.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::Var kh = tape_.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::Var vh = tape_.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::Var scores =
            tape_.scale(tape_.matmul_nt(qh, kh),
                        1.0 / std::sqrt(static_cast<double>(dh)));
        if (has_bias) scores = tape_.add(scores, attn_bias);
        heads.push_back(tape_.matmul(tape_.softmax_rows_op(scores), vh));
      }
      Tape::Var ctx = cfg.n_heads == 1 ? heads[0] : tape_.concat_cols(heads);
      x = tape_.add(x, linear(ctx, p + "wo", p + "bo"));

      Tape::Var f_in = tape_.layer_norm_op(x, pv(p + "ln2_g"), pv(p + "ln2_b"));
      Tape::Var ffn = tape_.gelu(linear(f_in, p + "w1", p + "b1"));
      x = tape_.add(x, linear(ffn, p + "w2", p + "b2"));
    }
    return tape_.layer_norm_op(x, pv("lnf_g"), pv("lnf_b"));
  }

  // Mean over mask-selected rows, then linear -> tanh -> linear -> L2 norm.
  Tape::Var pool_project(Tape::Var hidden, const BinaryMask& mask) {
    Tape::Var pooled = tape_.masked_mean_rows(hidden, mask);
    Tape::Var h1 = tape_.tanh_op(linear(pooled, "proj_w1", "proj_b1"));
    Tape::Var out = linear(h1, "proj_w2", "proj_b2");
    return tape_.l2_normalize_rows(out);
  }

  // One embedding Var per mask, per the configured pooling strategy. Under
  // mask_pooling_only the sentence is forwarded through the encoder stack
  // exactly once regardless of k.
  std::vector<Tape::Var> encode_propositions(
      std::span<const std::uint32_t> ids, const std::vector<BinaryMask>& masks) {
    if (masks.empty()) throw DataError("encode_propositions: no masks");
    for (const auto& m : masks) {
      if (m.size() != ids.size())
        throw ShapeError("mask length does not match sentence length");
      if (popcount(m) == 0) throw DataError("empty mask");
    }
    std::vector<Tape::Var> out;
    out.reserve(masks.size());
    switch (params_.config.pooling) {
      case PoolingStrategy::kMaskPoolingOnly: {
        Tape::Var hidden = encode_tokens(ids);
        for (const auto& m : masks) out.push_back(pool_project(hidden, m));
        break;
      }
      case PoolingStrategy::kFullMask: {
        for (const auto& m : masks)
          out.push_back(pool_project(encode_tokens(ids, &m), m));
        break;
      }
      case PoolingStrategy::kTokenSubsetOnly: {
        for (const auto& m : masks) {
          std::vector<std::uint32_t> subset;
          for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) subset.push_back(ids[i]);
          const BinaryMask all_ones(subset.size(), 1);
          out.push_back(pool_project(encode_tokens(subset), all_ones));
        }
        break;
      }
    }
    return out;
  }

  PropositionEmbedding embedding_value(Tape::Var v) const {
    const Tensor& t = tape_.value(v);
    PropositionEmbedding e(t.row(0).begin(), t.row(0).end());
    for (double x : e)
      if (!std::isfinite(x)) throw NumericError("non-finite embedding");
    return e;
  }

  // Parameter gradients accumulated by the last backward(), in visit order.
  Gradient param_grads() const {
    Gradient g;
    g.names = param_names_;
    g.parts.reserve(param_vars_.size());
    for (auto v : param_vars_) g.parts.push_back(tape_.grad(v));
    return g;
  }

 private:
  Tape::Var pv(const std::string& name) const {
    for (std::size_t i = 0; i < param_names_.size(); ++i)
      if (param_names_[i] == name) return param_vars_[i];
    throw ShapeError("unknown parameter: " + name);
  }

  Tape::Var linear(Tape::Var x, const std::string& w, const std::string& b) {
    return tape_.add_row_broadcast(tape_.matmul(x, pv(w)), pv(b));
  }

  const EncoderParams& params_;
  Tape tape_;
  std::vector<std::string> param_names_;
  std::vector<Tape::Var> param_vars_;
  std::size_t encode_calls_ = 0;
};

// Inference-only convenience: embeddings as plain vectors.
inline std::vector<PropositionEmbedding> encode_propositions(
    const EncoderParams& params, std::span<const std::uint32_t> ids,
    const std::vector<BinaryMask>& masks) {
  EncoderGraph g(params);
  std::vector<PropositionEmbedding> out;
  for (auto v : g.encode_propositions(ids, masks))
    out.push_back(g.embedding_value(v));
  return out;
}

// ---- checkpoint format --------------------------------------------------
//
//   magic "PENC" | version u32 | 8 config fields u32 | metadata JSON string
//   (u32 length + bytes) | param count u32 | per param: name string, rank
//   u32, dims u64 each, f64 data. Little-endian throughout.

inline constexpr char kCheckpointMagic[4] = {'P', 'E', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const EncoderParams& params,
                            const std::string& path,
                            const std::string& metadata_json = "{}") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  const auto& c = params.config;
  write_u32(os, c.vocab_size);
  write_u32(os, c.d_model);
  write_u32(os, c.n_heads);
  write_u32(os, c.n_layers);
  write_u32(os, c.ffn_mult);
  write_u32(os, c.max_len);
  write_u32(os, c.d_out);
  write_u32(os, static_cast<std::uint32_t>(c.pooling));
  write_string(os, metadata_json);
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Tensor&) { ++count; });
  write_u32(os, count);
  params.visit([&](const std::string& name, const Tensor& t) {
    write_string(os, name);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u64(os, d);
    for (double v : t.data()) write_f64(os, v);
  });
  if (!os) throw DataError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
  EncoderParams params;
  std::string metadata_json;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError("bad checkpoint magic: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  EncoderConfig c;
  c.vocab_size = read_u32(is);
  c.d_model = read_u32(is);
  c.n_heads = read_u32(is);
  c.n_layers = read_u32(is);
  c.ffn_mult = read_u32(is);
  c.max_len = read_u32(is);
  c.d_out = read_u32(is);
  c.pooling = static_cast<PoolingStrategy>(read_u32(is));
  LoadedCheckpoint out;
  out.metadata_json = read_string(is);
  out.params = init_params(c, 0);  // shapes only; data overwritten below
  const std::uint32_t count = read_u32(is);
  std::uint32_t seen = 0;
  out.params.visit([&](const std::string& name, Tensor& t) {
    const std::string stored = read_string(is);
    if (stored != name)
      throw DataError("checkpoint parameter order mismatch: expected " + name +
                      ", found " + stored);
    const std::uint32_t rank = read_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
    if (shape != t.shape()) throw DataError("checkpoint shape mismatch: " + name);
    for (double& v : t.data()) v = read_f64(is);
    ++seen;
  });
  if (seen != count) throw DataError("checkpoint parameter count mismatch");
  return out;
}

}  // namespace propenc
