#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "eclip/attention.hpp"
#include "eclip/error.hpp"

using namespace eclip;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor({r, c}, std::move(v));
}

using Rows = std::vector<std::vector<double>>;

// Row-wise softmax of (scores + mask) / √d computed one row at a time.
Rows softmax_oracle(const Tensor& q, const Tensor& k, const Tensor* mask) {
  const std::size_t n = q.rows(), d = q.cols();
  Rows out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logit(n);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
      logit[j] = (dot + (mask ? mask->at(i, j) : 0.0)) / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logit[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::isinf(logit[j]) ? 0.0 : std::exp(logit[j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[i][j] = std::isinf(logit[j]) ? 0.0 : std::exp(logit[j] - mx) / z;
  }
  return out;
}

Rows times(const Rows& a, const Rows& b) {
  Rows out(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Rows rows_of(const Tensor& t) {
  Rows out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  return out;
}

}  // namespace

TEST_CASE("canonical attention degenerate cases") {
  Graph g;
  const Tensor v1 = Tensor::matrix({{0.3, -1.2, 4.0}});
  const Tensor one = canonical_attention(g, Tensor::matrix({{1, 2, 3}}), Tensor::matrix({{-1, 0, 2}}), v1);
  for (std::size_t c = 0; c < 3; ++c) CHECK(one[c] == v1[c]);

  // Zero keys give equal logits, so every output row is the mean of V.
  const Tensor q = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  const Tensor k = Tensor::zeros({3, 2});
  const Tensor v = Tensor::matrix({{1, 2}, {3, 4}, {5, 9}});
  const Tensor out = canonical_attention(g, q, k, v);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out.at(i, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(out.at(i, 1) == doctest::Approx(5.0).epsilon(1e-15));
  }
}

TEST_CASE("canonical attention matches a per-row oracle") {
  std::mt19937_64 rng(11);
  const Tensor q = random_matrix(4, 8, rng), k = random_matrix(4, 8, rng), v = random_matrix(4, 8, rng);
  Graph g;
  const Tensor out = canonical_attention(g, q, k, v);
  const Rows expect = times(softmax_oracle(q, k, nullptr), rows_of(v));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out.at(i, c) - expect[i][c]) < 1e-12);
}

TEST_CASE("canonical attention rejects mismatched shapes") {
  Graph g;
  CHECK_THROWS_AS(canonical_attention(g, Tensor::zeros({3, 4}), Tensor::zeros({2, 4}), Tensor::zeros({3, 4})),
                  ShapeError);
  CHECK_THROWS_AS(canonical_attention(g, Tensor::zeros({3, 4}), Tensor::zeros({3, 4}), Tensor::zeros({3, 4}), 1, 3),
                  ShapeError);
}

TEST_CASE("mask matrix for m=4, P={1,3}") {
  const MaskMatrix mk = build_mask_matrix(4, SubjectIndexSet({3, 1}));
  REQUIRE(mk.size() == 6);
  const std::size_t hmn = 5;
  for (std::size_t j = 0; j < 6; ++j) {
    const bool open = j == 1 || j == 3 || j == hmn;
    CHECK(mk.at(hmn, j) == (open ? 0.0 : kNegInf));
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const bool open = i == 1 || i == 3 || i == 4;  // cls row stays open
    CHECK(mk.at(i, hmn) == (open ? 0.0 : kNegInf));
  }
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(mk.at(i, j) == 0.0);
}

TEST_CASE("mask matrix with empty and full subject sets") {
  const MaskMatrix empty = build_mask_matrix(4, SubjectIndexSet());
  for (std::size_t j = 0; j < 5; ++j) CHECK(empty.at(5, j) == kNegInf);
  CHECK(empty.at(5, 5) == 0.0);

  const MaskMatrix full = build_mask_matrix(4, SubjectIndexSet::all(4));
  std::size_t neg = 0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) neg += std::isinf(full.at(i, j)) ? 1 : 0;
  CHECK(neg == 1);
  CHECK(full.at(5, 4) == kNegInf);

  CHECK_THROWS_AS(build_mask_matrix(4, SubjectIndexSet({4})), ValidationError);
  CHECK_THROWS_AS(build_mask_matrix(0, SubjectIndexSet()), ValidationError);
}

TEST_CASE("subject weight matrix normalization, support and oracle") {
  std::mt19937_64 rng(12);
  const std::size_t m = 6, n = m + 2;
  const Tensor q = random_matrix(n, 8, rng), k = random_matrix(n, 8, rng);
  const MaskMatrix mk = build_mask_matrix(m, SubjectIndexSet({0, 4, 5}));
  Graph g;
  const Tensor u = subject_weight_matrix(g, q, k, mk);
  const Rows expect = softmax_oracle(q, k, &mk.entries);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      total += u.at(i, j);
      CHECK(std::abs(u.at(i, j) - expect[i][j]) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const bool allowed = j == 0 || j == 4 || j == 5 || j == mk.hmn_index();
    if (!allowed) CHECK(u.at(mk.hmn_index(), j) == 0.0);
  }
}

TEST_CASE("SAAM with A=0 equals canonical attention on random instances") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> pick_m(1, 14), pick_d(1, 32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = pick_m(rng), n = m + 2, d = pick_d(rng);
    const Tensor q = random_matrix(n, d, rng), k = random_matrix(n, d, rng), v = random_matrix(n, d, rng);
    std::vector<std::size_t> p;
    for (std::size_t i = 0; i < m; ++i)
      if (rng() % 2) p.push_back(i);
    Graph g;
    const Tensor u = subject_weight_matrix(g, q, k, build_mask_matrix(m, SubjectIndexSet(p)));
    const Tensor saam = saam_attention(g, q, k, v, u, Tensor::zeros({n, n}));
    const Tensor base = canonical_attention(g, q, k, v);
    double worst = 0.0;
    for (std::size_t i = 0; i < saam.numel(); ++i) worst = std::max(worst, std::abs(saam[i] - base[i]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("SAAM with A=J routes everything through the subject stream") {
  std::mt19937_64 rng(14);
  const std::size_t m = 4, n = 6, d = 5;
  const Tensor q = random_matrix(n, d, rng), k = random_matrix(n, d, rng), v = random_matrix(n, d, rng);
  Graph g;
  const Tensor u = subject_weight_matrix(g, q, k, build_mask_matrix(m, SubjectIndexSet({2})));
  const Tensor out = saam_attention(g, q, k, v, u, Tensor::filled({n, n}, 1.0));
  const Rows s = softmax_oracle(q, k, nullptr);
  const Rows expect = times(times(s, rows_of(u)), rows_of(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out.at(i, c) - expect[i][c]) < 1e-12);
}

TEST_CASE("SAAM with a random gate matches a loop oracle") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> unit(0.01, 0.99);
  const std::size_t m = 5, n = 7, d = 6;
  const Tensor q = random_matrix(n, d, rng), k = random_matrix(n, d, rng), v = random_matrix(n, d, rng);
  std::vector<double> av(n * n);
  for (auto& x : av) x = unit(rng);
  const Tensor a({n, n}, av);
  Graph g;
  const MaskMatrix mk = build_mask_matrix(m, SubjectIndexSet({1, 2}));
  const Tensor u = subject_weight_matrix(g, q, k, mk);
  const Tensor out = saam_attention(g, q, k, v, u, a);

  const Rows s = softmax_oracle(q, k, nullptr);
  const Rows uu = softmax_oracle(q, k, &mk.entries);
  const Rows vv = rows_of(v);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        expect += s[i][j] * (1.0 - av[i * n + j]) * vv[j][c];
        double routed = 0.0;
        for (std::size_t l = 0; l < n; ++l) routed += uu[j][l] * vv[l][c];
        expect += s[i][j] * av[i * n + j] * routed;
      }
      CHECK(std::abs(out.at(i, c) - expect) < 1e-12);
    }
}

TEST_CASE("SAAM gradients pass a finite-difference check") {
  std::mt19937_64 rng(16);
  const std::size_t m = 3, n = 5, d = 4;
  Tensor q = random_matrix(n, d, rng), k = random_matrix(n, d, rng), v = random_matrix(n, d, rng);
  Tensor a_raw = random_matrix(n, n, rng);
  for (auto* t : {&q, &k, &v, &a_raw}) t->set_requires_grad(true);
  const Tensor w = random_matrix(n, d, rng);
  const MaskMatrix mk = build_mask_matrix(m, SubjectIndexSet({0, 2}));
  const double err = finite_diff_check(
      [&](Graph& g) {
        const Tensor u = subject_weight_matrix(g, q, k, mk);
        return sum(g, mul(g, saam_attention(g, q, k, v, u, sigmoid(g, a_raw)), w));
      },
      {q, k, v, a_raw}, 1e-6);
  CHECK(err < 1e-7);
}

TEST_CASE("SAP token sums positional embeddings of the subject patches") {
  std::mt19937_64 rng(17);
  const Tensor pos = random_matrix(6, 4, rng);
  Graph g;
  const Tensor e0 = sap_token(g, pos, SubjectIndexSet({0}));
  for (std::size_t c = 0; c < 4; ++c) CHECK(e0[c] == pos.at(0, c));

  const Tensor a = sap_token(g, pos, SubjectIndexSet({0, 2}));
  const Tensor b = sap_token(g, pos, SubjectIndexSet({2, 0}));
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(a[c] == pos.at(0, c) + pos.at(2, c));
    CHECK(a[c] == b[c]);
  }

  const Tensor z = sap_token(g, pos, SubjectIndexSet());
  CHECK(z.dims() == Shape{1, 4});
  for (std::size_t c = 0; c < 4; ++c) CHECK(z[c] == 0.0);

  CHECK_THROWS_AS(sap_token(g, pos, SubjectIndexSet({6})), ValidationError);
}

TEST_CASE("SAP token is invariant to the order subject indices are supplied in") {
  std::mt19937_64 rng(18);
  const Tensor pos = random_matrix(16, 8, rng);
  std::vector<std::size_t> idx = {3, 7, 8, 12, 15};
  Graph g;
  const Tensor ref = sap_token(g, pos, SubjectIndexSet(idx));
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const Tensor t = sap_token(g, pos, SubjectIndexSet(idx));
    for (std::size_t c = 0; c < 8; ++c) CHECK(t[c] == ref[c]);
  }
}
