#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "propenc/loss.hpp"
#include "propenc/numerics.hpp"
#include "propenc/rng.hpp"

using namespace propenc;

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// N embeddings with |P(i)| drawn from {0,1,2}; symmetric by construction.
struct RandomBatch {
  std::vector<std::vector<double>> v;
  std::vector<std::vector<std::size_t>> pos;
};

RandomBatch random_batch(Rng& rng, std::size_t n, std::size_t d,
                         bool singleton_only = false) {
  RandomBatch b;
  for (std::size_t i = 0; i < n; ++i) b.v.push_back(random_unit(rng, d));
  b.pos.assign(n, {});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.below(singleton_only ? 4 : 3) != 0) continue;
      if (singleton_only && (!b.pos[i].empty() || !b.pos[j].empty())) continue;
      if (!singleton_only && (b.pos[i].size() >= 2 || b.pos[j].size() >= 2))
        continue;
      b.pos[i].push_back(j);
      b.pos[j].push_back(i);
    }
  return b;
}

double loss_of_flat(const RandomBatch& b, std::span<const double> flat,
                    double tau) {
  const std::size_t d = b.v[0].size();
  std::vector<std::vector<double>> v(b.v.size(), std::vector<double>(d));
  for (std::size_t i = 0; i < b.v.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) v[i][c] = flat[i * d + c];
  return supcon_loss(v, b.pos, tau).value;
}

}  // namespace

TEST_CASE("identical positive pair has zero loss") {
  const std::vector<std::vector<double>> v{{1.0, 0.0}, {1.0, 0.0}};
  const std::vector<std::vector<std::size_t>> pos{{1}, {0}};
  for (double tau : {1.0, 0.1, 0.01})
    CHECK(supcon_loss(v, pos, tau).value == 0.0);
}

TEST_CASE("three-vector analytic value") {
  const std::vector<std::vector<double>> v{{1, 0}, {1, 0}, {0, 1}};
  const std::vector<std::vector<std::size_t>> pos{{1}, {0}, {}};
  const double expected = 2.0 * std::log1p(std::exp(-1.0));
  CHECK(std::abs(supcon_loss(v, pos, 1.0).value - expected) <= 1e-12);
}

TEST_CASE("gradient matches finite differences on mixed batches") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const auto b = random_batch(rng, 4 + rng.below(3), 3 + rng.below(3));
    bool any = false;
    for (const auto& p : b.pos) any = any || !p.empty();
    if (!any) continue;
    const double tau = 0.5;
    const auto res = supcon_loss(b.v, b.pos, tau);

    std::vector<double> flat;
    for (const auto& vi : b.v) flat.insert(flat.end(), vi.begin(), vi.end());
    const auto fd = finite_diff_gradient(
        [&](std::span<const double> p) { return loss_of_flat(b, p, tau); },
        flat, 1e-5);
    std::vector<double> analytic;
    for (const auto& g : res.embedding_grads)
      analytic.insert(analytic.end(), g.begin(), g.end());
    CHECK(max_rel_error(analytic, fd, 1e-6) < 1e-4);
  }
}

TEST_CASE("reduces to in-batch softmax cross-entropy for singletons") {
  Rng rng(99);
  int tested = 0;
  for (int trial = 0; trial < 200 && tested < 100; ++trial) {
    const auto b = random_batch(rng, 4 + rng.below(4), 4, true);
    bool any = false;
    for (const auto& p : b.pos) any = any || !p.empty();
    if (!any) continue;
    ++tested;
    const double tau = 0.05;
    const double a = supcon_loss(b.v, b.pos, tau).value;
    const double c = inbatch_softmax_ce(b.v, b.pos, tau);
    CHECK(std::abs(a - c) <= 1e-12);
  }
  CHECK(tested >= 50);
}

TEST_CASE("nonnegative and permutation-invariant") {
  Rng rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    const auto b = random_batch(rng, 5, 4);
    const double L = supcon_loss(b.v, b.pos, 0.2).value;
    CHECK(L >= 0.0);

    // relabel the batch with a random permutation
    std::vector<std::size_t> perm(b.v.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    RandomBatch pb;
    pb.v.resize(b.v.size());
    pb.pos.resize(b.pos.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pb.v[inv[i]] = b.v[i];
      for (std::size_t p : b.pos[i]) pb.pos[inv[i]].push_back(inv[p]);
    }
    CHECK(supcon_loss(pb.v, pb.pos, 0.2).value == L);
  }
}

TEST_CASE("separation limit at low temperature") {
  // 16 positive pairs (cosine 1) with all cross-pair cosines exactly 0.5:
  // v_k = (sqrt(.5), sqrt(.5) * e_k). N = 32, tau = 0.01, delta = 0.5.
  const std::size_t pairs = 16, d = 17;
  std::vector<std::vector<double>> v;
  std::vector<std::vector<std::size_t>> pos;
  const double a = std::sqrt(0.5);
  for (std::size_t k = 0; k < pairs; ++k) {
    std::vector<double> e(d, 0.0);
    e[0] = a;
    e[1 + k] = a;
    v.push_back(e);
    v.push_back(e);
    pos.push_back({2 * k + 1});
    pos.push_back({2 * k});
  }
  CHECK(supcon_loss(v, pos, 0.01).value < 1e-8);
}

TEST_CASE("input validation") {
  const std::vector<std::vector<double>> v{{1.0, 0.0}};
  CHECK_THROWS_AS(supcon_loss(v, {{}}, 0.01), DataError);

  const std::vector<std::vector<double>> v2{{1, 0}, {0, 1}};
  CHECK_THROWS_AS(supcon_loss(v2, {{1}, {}}, 0.01), DataError);  // asymmetric
  CHECK_THROWS_AS(supcon_loss(v2, {{0}, {1}}, 0.01), DataError);  // reflexive
  CHECK_THROWS_AS(supcon_loss(v2, {{1}, {0}}, 0.0), DataError);   // tau
  CHECK_THROWS_AS(
      inbatch_softmax_ce({{1, 0}, {1, 0}, {0, 1}}, {{1, 2}, {0}, {0}}, 0.01),
      DataError);  // non-singleton
}
