#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "icmil/aggregator.hpp"
#include "icmil/rng.hpp"
#include "support/oracles.hpp"

using namespace icmil;

namespace {

GatedAttentionParams random_params(int d_hidden, int d_attn,
                                   std::uint64_t seed) {
  GatedAttentionParams p(d_hidden, d_attn);
  auto rng = make_rng(seed);
  p.init(rng);
  return p;
}

Mat random_embeddings(int k, int d, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(k, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("attention scores: singleton and symmetry") {
  auto p = random_params(3, 4, 1);
  const Mat one = random_embeddings(1, 3, 2);
  const Vec s1 = attention_scores(p, one);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0] == doctest::Approx(1.0).epsilon(1e-12));

  Mat same(5, 3);
  for (int i = 0; i < 5; ++i) same.row(i) = one.row(0);
  const Vec su = attention_scores(p, same);
  for (int i = 0; i < 5; ++i) CHECK(su[i] == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("hand-built scalar case from the gate equation") {
  GatedAttentionParams p(1, 1);
  p.v1 << 1.0;
  p.v2 << 0.0;
  p.omega << 1.0;
  Mat h(2, 1);
  h << 0.0, 50.0;
  // logits: [tanh(0)*0.5, tanh(50)*0.5] = [0, ~0.5]
  const double z1 = std::tanh(50.0) * 0.5;
  const double e0 = std::exp(-z1), e1 = 1.0;
  const Vec s = attention_scores(p, h);
  CHECK(s[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-9));
  CHECK(s[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-9));
}

TEST_CASE("attention matches the scalar oracle on random cases") {
  for (int trial = 0; trial < 50; ++trial) {
    auto rng = make_rng(100 + trial);
    std::uniform_int_distribution<int> kd(1, 8), dd(2, 4), ad(1, 5);
    const int k = kd(rng), d = dd(rng), a = ad(rng);
    auto p = random_params(d, a, 200 + trial);
    const Mat emb = random_embeddings(k, d, 300 + trial);

    const AttentionResult res = aggregate_attention(p, emb);
    const auto ref_scores = oracle::gated_attention_scores(p.v1, p.v2, p.omega, emb);
    const auto ref_bag = oracle::gated_attention_bag(p.v1, p.v2, p.omega, emb);
    for (int i = 0; i < k; ++i) {
      CHECK(res.weights[i] == doctest::Approx(ref_scores[static_cast<size_t>(i)])
                                   .epsilon(1e-9));
    }
    for (int j = 0; j < d; ++j) {
      CHECK(res.bag_embedding[j] ==
            doctest::Approx(ref_bag[static_cast<size_t>(j)]).epsilon(1e-9));
    }
  }
}

TEST_CASE("weights normalize and the bag embedding stays in the affine span") {
  auto p = random_params(6, 8, 4);
  for (int k : {2, 17, 256, 1024}) {
    const Mat emb = random_embeddings(k, 6, static_cast<std::uint64_t>(k));
    const AttentionResult res = aggregate_attention(p, emb);
    CHECK(std::abs(res.weights.sum() - 1.0) < 1e-6);
    CHECK(res.weights.minCoeff() >= 0.0);

    // Least-squares residual of H against the rows.
    const Vec coeffs = emb.transpose()
                           .colPivHouseholderQr()
                           .solve(res.bag_embedding);
    CHECK((emb.transpose() * coeffs - res.bag_embedding).norm() < 1e-6);
  }
}

TEST_CASE("permutation invariance of all aggregators") {
  auto p = random_params(4, 5, 6);
  const Mat emb = random_embeddings(7, 4, 8);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(9);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat shuffled(7, 4);
  for (int i = 0; i < 7; ++i) shuffled.row(i) = emb.row(perm[static_cast<size_t>(i)]);

  const AttentionResult a = aggregate_attention(p, emb);
  const AttentionResult b = aggregate_attention(p, shuffled);
  CHECK((a.bag_embedding - b.bag_embedding).cwiseAbs().maxCoeff() < 1e-6);
  for (int i = 0; i < 7; ++i) {
    CHECK(b.weights[i] ==
          doctest::Approx(a.weights[perm[static_cast<size_t>(i)]]).epsilon(1e-9));
  }
  for (PoolKind kind : {PoolKind::kMean, PoolKind::kMax}) {
    CHECK((aggregate_pool(kind, emb) - aggregate_pool(kind, shuffled))
              .cwiseAbs()
              .maxCoeff() < 1e-6);
  }
}

TEST_CASE("pooling arithmetic") {
  Mat emb(2, 2);
  emb << 1, 5, 3, 1;
  const Vec mean = aggregate_pool(PoolKind::kMean, emb);
  CHECK(mean[0] == 2.0);
  CHECK(mean[1] == 3.0);
  const Vec mx = aggregate_pool(PoolKind::kMax, emb);
  CHECK(mx[0] == 3.0);
  CHECK(mx[1] == 5.0);

  Mat single(1, 2);
  single << 4, -2;
  CHECK(aggregate_pool(PoolKind::kMean, single) == single.row(0).transpose());
  CHECK(aggregate_pool(PoolKind::kMax, single) == single.row(0).transpose());
}

TEST_CASE("zero omega reduces attention to mean pooling") {
  auto p = random_params(4, 5, 10);
  p.omega.setZero();
  const Mat emb = random_embeddings(9, 4, 11);
  const AttentionResult res = aggregate_attention(p, emb);
  CHECK((res.bag_embedding - aggregate_pool(PoolKind::kMean, emb))
            .cwiseAbs()
            .maxCoeff() < 1e-6);
}

TEST_CASE("single-instance bag returns its own embedding") {
  auto p = random_params(3, 4, 12);
  const Mat emb = random_embeddings(1, 3, 13);
  const AttentionResult res = aggregate_attention(p, emb);
  CHECK((res.bag_embedding - emb.row(0).transpose()).norm() < 1e-12);

  Mat same(4, 3);
  for (int i = 0; i < 4; ++i) same.row(i) = emb.row(0);
  const AttentionResult res2 = aggregate_attention(p, same);
  CHECK((res2.bag_embedding - emb.row(0).transpose()).norm() < 1e-9);
}

TEST_CASE("attention gradients match finite differences") {
  auto rng = make_rng(14);
  auto p = random_params(3, 4, 15);
  Mat emb = random_embeddings(5, 3, 16);
  Vec probe(3);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 3; ++i) probe[i] = dist(rng);

  AttentionCache cache;
  p.zero_grad();
  aggregate_attention(p, emb, cache);
  const Mat grad_emb = attention_backward(p, emb, cache, probe);

  auto f = [&] { return probe.dot(aggregate_attention(p, emb).bag_embedding); };
  CHECK(oracle::max_fd_rel_error(f, p.params(), p.grads(), rng, 12) < 1e-3);

  // Gradient wrt the embeddings themselves.
  double worst = 0.0;
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    for (Eigen::Index j = 0; j < emb.cols(); ++j) {
      const double numeric = oracle::fd_derivative(f, &emb(i, j));
      worst = std::max(worst, oracle::rel_error(grad_emb(i, j), numeric));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("dimension mismatch is rejected") {
  auto p = random_params(3, 4, 17);
  CHECK_THROWS(attention_scores(p, random_embeddings(2, 5, 18)));
  CHECK_THROWS(aggregator_kind_from_string("transformer"));
}
