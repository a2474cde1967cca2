#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "propenc/encoder.hpp"
#include "propenc/loss.hpp"
#include "propenc/numerics.hpp"
#include "propenc/rng.hpp"
#include "propenc/trainer.hpp"

using namespace propenc;

namespace {

EncoderConfig tiny_config(PoolingStrategy s = PoolingStrategy::kMaskPoolingOnly) {
  EncoderConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ffn_mult = 2;
  c.max_len = 8;
  c.d_out = 4;
  c.pooling = s;
  return c;
}

double cosine(const PropositionEmbedding& a, const PropositionEmbedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("encode_tokens shapes and errors") {
  const auto params = init_params(tiny_config(), 1);
  EncoderGraph g(params);
  const std::vector<std::uint32_t> one{3};
  const auto& t = g.tape().value(g.encode_tokens(one));
  CHECK(t.rows() == 1);
  CHECK(t.cols() == 8);

  EncoderGraph g2(params);
  const std::vector<std::uint32_t> overlong(9, 2);
  CHECK_THROWS_AS(g2.encode_tokens(overlong), DataError);
  const std::vector<std::uint32_t> unknown{99};
  CHECK_THROWS_AS(g2.encode_tokens(unknown), DataError);
  CHECK_THROWS_AS(g2.encode_tokens({}), DataError);
}

TEST_CASE("position embeddings make order matter") {
  const auto params = init_params(tiny_config(), 2);
  EncoderGraph g1(params), g2(params);
  const Tensor a = g1.tape().value(g1.encode_tokens(std::vector<std::uint32_t>{2, 3}));
  const Tensor b = g2.tape().value(g2.encode_tokens(std::vector<std::uint32_t>{3, 2}));
  CHECK(a.data() != b.data());
}

TEST_CASE("fixed seed and input re-run bit-identically") {
  const auto params = init_params(tiny_config(), 3);
  const std::vector<std::uint32_t> ids{2, 5, 7, 3};
  const std::vector<BinaryMask> masks{{1, 0, 1, 0}, {0, 1, 1, 1}};
  const auto e1 = encode_propositions(params, ids, masks);
  const auto e2 = encode_propositions(params, ids, masks);
  CHECK(e1 == e2);
}

TEST_CASE("masked mean pooling arithmetic") {
  Tape tape;
  const auto x = tape.leaf(Tensor({2, 2}, {1, 0, 3, 2}));
  const auto pooled = tape.masked_mean_rows(x, {1, 1});
  CHECK(tape.value(pooled).at(0, 0) == 2.0);
  CHECK(tape.value(pooled).at(0, 1) == 1.0);

  const auto single = tape.masked_mean_rows(x, {0, 1});
  CHECK(tape.value(single).at(0, 0) == 3.0);
  CHECK(tape.value(single).at(0, 1) == 2.0);

  CHECK_THROWS_WITH_AS(tape.masked_mean_rows(x, {0, 0}), "empty mask",
                       DataError);
}

TEST_CASE("projection yields unit norm or flags degenerate input") {
  auto params = init_params(tiny_config(), 4);
  {
    EncoderGraph g(params);
    const auto hidden = g.encode_tokens(std::vector<std::uint32_t>{1, 2, 3});
    const auto emb = g.embedding_value(g.pool_project(hidden, {1, 1, 0}));
    double norm = 0.0;
    for (double v : emb) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
  }
  {
    // zero pooled input through a zero-bias MLP normalizes a zero vector
    EncoderGraph g(params);
    const auto zero = g.tape().leaf(Tensor({1, 8}));
    CHECK_THROWS_WITH_AS(
        g.embedding_value(g.tape().l2_normalize_rows(
            g.tape().matmul(g.tape().tanh_op(zero), g.tape().leaf(Tensor({8, 4}))))),
        "degenerate embedding", NumericError);
  }
}

TEST_CASE("all-ones mask reduces to the sentence-level embedding") {
  const auto params = init_params(tiny_config(), 5);
  const std::vector<std::uint32_t> ids{4, 6, 2};
  EncoderGraph g(params);
  const auto vars = g.encode_propositions(ids, {BinaryMask{1, 1, 1}});
  EncoderGraph g2(params);
  const auto manual =
      g2.pool_project(g2.encode_tokens(ids), BinaryMask{1, 1, 1});
  CHECK(g.embedding_value(vars[0]) == g2.embedding_value(manual));
}

TEST_CASE("proposition order invariance and independence are exact") {
  for (auto strategy :
       {PoolingStrategy::kMaskPoolingOnly, PoolingStrategy::kFullMask,
        PoolingStrategy::kTokenSubsetOnly}) {
    const auto params = init_params(tiny_config(strategy), 6);
    const std::vector<std::uint32_t> ids{1, 3, 5, 7, 9};
    const std::vector<BinaryMask> masks{
        {1, 1, 0, 0, 0}, {0, 0, 1, 1, 0}, {0, 1, 0, 1, 1}};
    const auto fwd = encode_propositions(params, ids, masks);
    const auto rev = encode_propositions(
        params, ids, {masks[2], masks[0], masks[1]});
    CHECK(fwd[0] == rev[1]);
    CHECK(fwd[1] == rev[2]);
    CHECK(fwd[2] == rev[0]);

    // removing other masks never changes an embedding
    const auto solo = encode_propositions(params, ids, {masks[1]});
    CHECK(solo[0] == fwd[1]);
  }
}

TEST_CASE("mask pooling strategy forwards the encoder once") {
  const auto params = init_params(tiny_config(), 7);
  const std::vector<std::uint32_t> ids{1, 2, 3, 4};
  const std::vector<BinaryMask> masks{
      {1, 0, 0, 0}, {0, 1, 1, 0}, {1, 1, 1, 1}, {0, 0, 0, 1}, {1, 0, 1, 0}};
  EncoderGraph g(params);
  g.encode_propositions(ids, masks);
  CHECK(g.encode_calls() == 1);

  const auto full = init_params(tiny_config(PoolingStrategy::kFullMask), 7);
  EncoderGraph gf(full);
  gf.encode_propositions(ids, masks);
  CHECK(gf.encode_calls() == masks.size());
}

TEST_CASE("pooling strategies disagree with each other") {
  const std::vector<std::uint32_t> ids{2, 4, 6, 8};
  const std::vector<BinaryMask> masks{{1, 1, 0, 0}};
  std::vector<PropositionEmbedding> out;
  for (auto strategy :
       {PoolingStrategy::kMaskPoolingOnly, PoolingStrategy::kFullMask,
        PoolingStrategy::kTokenSubsetOnly}) {
    const auto params = init_params(tiny_config(strategy), 8);
    out.push_back(encode_propositions(params, ids, masks)[0]);
  }
  CHECK(cosine(out[0], out[1]) < 0.9999);
  CHECK(cosine(out[0], out[2]) < 0.9999);
}

TEST_CASE("token subset strategy equals encoding the subset alone") {
  const auto params = init_params(tiny_config(PoolingStrategy::kTokenSubsetOnly), 9);
  const std::vector<std::uint32_t> ids{3, 5, 7, 9};
  const auto via_mask =
      encode_propositions(params, ids, {BinaryMask{0, 1, 0, 1}});
  const std::vector<std::uint32_t> subset{5, 9};
  const auto direct = encode_propositions(params, subset, {BinaryMask{1, 1}});
  CHECK(via_mask[0] == direct[0]);
}

TEST_CASE("same masked tokens differ across contexts") {
  auto params = init_params(tiny_config(), 10);
  // larger weights make the attention mixing visible at this tiny scale
  params.visit([](const std::string& name, Tensor& t) {
    if (name.find("_g") == std::string::npos &&
        name.find("_b") == std::string::npos)
      for (auto& v : t.data()) v *= 10.0;
  });
  // tokens {2, 3} pooled inside varying sentences: some context pair must
  // give a visibly different embedding
  double min_cos = 1.0;
  const auto base = encode_propositions(
      params, std::vector<std::uint32_t>{2, 3, 4, 5}, {BinaryMask{1, 1, 0, 0}});
  for (std::uint32_t w = 6; w < 11; ++w) {
    const auto other = encode_propositions(
        params, std::vector<std::uint32_t>{2, 3, w, w + 1},
        {BinaryMask{1, 1, 0, 0}});
    min_cos = std::min(min_cos, cosine(base[0], other[0]));
  }
  CHECK(min_cos < 0.999);
}

TEST_CASE("full graph gradient check against finite differences") {
  const auto cfg = tiny_config();
  auto params = init_params(cfg, 11);

  Minibatch batch;
  batch.sentences.push_back(tokenize("a b c d"));
  batch.sentences.push_back(tokenize("e f g"));
  batch.propositions = {{0, {1, 1, 0, 0}}, {0, {0, 0, 1, 1}}, {1, {1, 1, 1}}};
  batch.positives = {{2}, {}, {0}};
  const std::vector<std::vector<std::uint32_t>> ids{{2, 3, 4, 5}, {6, 7, 8}};

  const double tau = 0.5;
  auto loss_for = [&](const EncoderParams& p) {
    EncoderGraph g(p);
    std::vector<std::vector<double>> embs(batch.propositions.size());
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<BinaryMask> masks;
      std::vector<std::size_t> idx;
      for (std::size_t q = 0; q < batch.propositions.size(); ++q)
        if (batch.propositions[q].sentence_idx == s) {
          masks.push_back(batch.propositions[q].mask);
          idx.push_back(q);
        }
      const auto vars = g.encode_propositions(ids[s], masks);
      for (std::size_t k = 0; k < vars.size(); ++k)
        embs[idx[k]] = g.embedding_value(vars[k]);
    }
    return supcon_loss(embs, batch.positives, tau).value;
  };

  // analytic gradient via the tape
  EncoderGraph g(params);
  std::vector<std::vector<double>> embs(batch.propositions.size());
  std::vector<Tape::Var> vars_flat(batch.propositions.size());
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<BinaryMask> masks;
    std::vector<std::size_t> idx;
    for (std::size_t q = 0; q < batch.propositions.size(); ++q)
      if (batch.propositions[q].sentence_idx == s) {
        masks.push_back(batch.propositions[q].mask);
        idx.push_back(q);
      }
    const auto vars = g.encode_propositions(ids[s], masks);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      embs[idx[k]] = g.embedding_value(vars[k]);
      vars_flat[idx[k]] = vars[k];
    }
  }
  const auto loss = supcon_loss(embs, batch.positives, tau);
  for (std::size_t q = 0; q < vars_flat.size(); ++q) {
    Tensor seed({std::size_t{1}, loss.embedding_grads[q].size()},
                std::vector<double>(loss.embedding_grads[q].begin(),
                                    loss.embedding_grads[q].end()));
    g.tape().seed(vars_flat[q], seed);
  }
  g.tape().backward();
  const auto analytic = g.param_grads().flatten();

  const auto flat = params.flatten();
  auto f = [&](std::span<const double> p) {
    EncoderParams copy = params;
    copy.unflatten(p);
    return loss_for(copy);
  };
  const auto fd = finite_diff_gradient(f, flat, 1e-5);
  CHECK(max_rel_error(analytic, fd, 1e-6) < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto params = init_params(tiny_config(), 12);
  const std::string path =
      std::string(PROPENC_TMP_DIR) + "/ckpt_roundtrip.penc";
  save_checkpoint(params, path, R"({"vocab":["a","b"]})");
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.metadata_json == R"({"vocab":["a","b"]})");
  CHECK(loaded.params.config == params.config);
  CHECK(loaded.params.flatten() == params.flatten());

  // corrupt magic
  {
    std::ofstream os(path, std::ios::binary);
    os << "XXXXgarbage";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  CHECK_THROWS_AS(load_checkpoint(std::string(PROPENC_TMP_DIR) + "/nope.penc"),
                  DataError);
}

TEST_CASE("config validation") {
  EncoderConfig c = tiny_config();
  c.n_heads = 3;  // does not divide d_model=8
  CHECK_THROWS_AS(init_params(c, 1), DataError);
  c = tiny_config();
  c.vocab_size = 1;
  CHECK_THROWS_AS(init_params(c, 1), DataError);
  c = tiny_config();
  c.d_out = 0;
  CHECK_THROWS_AS(init_params(c, 1), DataError);
}
