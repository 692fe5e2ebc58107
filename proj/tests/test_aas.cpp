// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffsim/aas.hpp"
#include "oracles.hpp"

using namespace diffsim;

namespace {

MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("scaled_dot_attention: single token identity") {
  const MatrixXd q = mat({{3.0}});
  const MatrixXd out = scaled_dot_attention(q, q, q);
  CHECK(out.rows() == 1);
  CHECK(out(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("scaled_dot_attention: identical keys force uniform softmax") {
  const MatrixXd k = mat({{1, 0}, {1, 0}});
  const MatrixXd v = mat({{2, 0}, {0, 2}});
  for (double qx : {-3.0, 0.0, 0.7, 5.0}) {
    const MatrixXd q = mat({{qx, 1.0 - qx}});
    const MatrixXd out = scaled_dot_attention(q, k, v);
    CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("scaled_dot_attention: frozen two-key example") {
  const MatrixXd q = mat({{1, 0}});
  const MatrixXd k = mat({{1, 0}, {0, 1}});
  const MatrixXd v = mat({{1, 0}, {0, 1}});
  const MatrixXd out = scaled_dot_attention(q, k, v);
  // frozen from the naive oracle
  CHECK(out(0, 0) == doctest::Approx(0.6698).epsilon(1e-3));
  CHECK(out(0, 1) == doctest::Approx(0.3302).epsilon(1e-3));
  const auto ref = oracle::naive_attention(oracle::to_mat(q), oracle::to_mat(k),
                                           oracle::to_mat(v));
  CHECK(out(0, 0) == doctest::Approx(ref[0][0]).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(ref[0][1]).epsilon(1e-12));
}

TEST_CASE("scaled_dot_attention: error paths") {
  const MatrixXd q = mat({{1, 0}});
  const MatrixXd k3 = mat({{1, 0, 0}});
  CHECK_THROWS_AS(scaled_dot_attention(q, k3, k3), DimensionError);

  MatrixXd bad = mat({{1, 0}});
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(scaled_dot_attention(bad, mat({{1, 0}}), mat({{1, 0}})),
                  ValidationError);
  // k/v token mismatch
  CHECK_THROWS_AS(
      scaled_dot_attention(q, mat({{1, 0}, {0, 1}}), mat({{1, 0}})),
      DimensionError);
}

TEST_CASE("attention_weights rows sum to 1") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = oracle::random_latents<double>(seed, 1, 4, 5, 3);
    const MatrixXd w = attention_weights(p.q[0], p.k[0]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax is numerically stable at large magnitudes") {
  const MatrixXd q = mat({{1e4, 0}});
  const MatrixXd k = mat({{1e4, 0}, {0, 1e4}});
  const MatrixXd v = mat({{1, 0}, {0, 1}});
  const MatrixXd out = scaled_dot_attention(q, k, v);
  CHECK(out.allFinite());
  CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("multihead_align: determinism and permutation invariance") {
  const auto a = oracle::random_latents<double>(11, 2, 4, 4, 3);
  auto b = oracle::random_latents<double>(12, 2, 4, 4, 3);

  const auto once = multihead_align(a, b);
  const auto twice = multihead_align(a, b);
  CHECK(once.x == twice.x);  // bit-stable

  // joint row permutation of b's k and v
  auto permuted = b;
  const std::vector<int> perm = {2, 0, 3, 1};
  for (int h = 0; h < b.heads(); ++h)
    for (int r = 0; r < 4; ++r) {
      permuted.k[static_cast<std::size_t>(h)].row(r) =
          b.k[static_cast<std::size_t>(h)].row(perm[static_cast<std::size_t>(r)]);
      permuted.v[static_cast<std::size_t>(h)].row(r) =
          b.v[static_cast<std::size_t>(h)].row(perm[static_cast<std::size_t>(r)]);
    }
  const auto aligned = multihead_align(a, permuted);
  CHECK((aligned.x - once.x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("multihead_align: matches per-head oracle") {
  const auto a = oracle::random_latents<double>(21, 2, 4, 4, 3);
  const auto b = oracle::random_latents<double>(22, 2, 4, 4, 3);
  const auto fast = multihead_align(a, b);
  const auto ref = oracle::naive_multihead(a, b);
  for (Eigen::Index i = 0; i < fast.x.rows(); ++i)
    for (Eigen::Index j = 0; j < fast.x.cols(); ++j)
      CHECK(std::abs(fast.x(i, j) -
                     ref[static_cast<std::size_t>(i)]
                        [static_cast<std::size_t>(j)]) < 1e-5);
}

TEST_CASE("multihead_align: head mismatch errors") {
  const auto a = oracle::random_latents<double>(31, 2, 4, 4, 3);
  const auto b1 = oracle::random_latents<double>(32, 1, 4, 4, 3);
  CHECK_THROWS_AS(multihead_align(a, b1), DimensionError);
  const auto b2 = oracle::random_latents<double>(33, 2, 4, 4, 2);
  CHECK_THROWS_AS(multihead_align(a, b2), DimensionError);
}

TEST_CASE("token_cosine: trivial and frozen values") {
  const MatrixXd x = mat({{1, 0}, {0, 1}});
  CHECK(token_cosine(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(token_cosine(x, MatrixXd(-x)) == doctest::Approx(-1.0).epsilon(1e-12));

  const MatrixXd y = mat({{1, 0}, {1, 1}});
  const double expected = (1.0 + 1.0 / std::sqrt(2.0)) / 2.0;  // 0.853553...
  CHECK(token_cosine(x, y) == doctest::Approx(0.853553).epsilon(1e-6));
  CHECK(token_cosine(x, y) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("token_cosine: zero row names the row index") {
  const MatrixXd x = mat({{1, 0}, {0, 0}});
  const MatrixXd y = mat({{1, 0}, {1, 1}});
  try {
    token_cosine(x, y);
    FAIL("expected DegenerateFeatureError");
  } catch (const DegenerateFeatureError& e) {
    CHECK(e.row() == 1);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  CHECK_THROWS_AS(token_cosine(y, x), DegenerateFeatureError);
  CHECK_THROWS_AS(token_cosine(x, mat({{1, 0}})), DimensionError);
}

TEST_CASE("aas: self is 1, V-scaling is invariant, oracle agrees") {
  const auto p = oracle::random_latents<double>(41, 2, 4, 4, 3);
  CHECK(aas(p, p) == doctest::Approx(1.0).epsilon(1e-6));

  const auto a = oracle::random_latents<double>(42, 2, 4, 4, 3);
  auto b = oracle::random_latents<double>(43, 2, 4, 4, 3);
  const double base = aas(a, b);
  for (double c : {0.1, 3.0, 10.0}) {
    auto scaled = b;
    for (auto& v : scaled.v) v *= c;
    CHECK(std::abs(aas(a, scaled) - base) < 1e-6);
    auto scaled_a = a;
    for (auto& v : scaled_a.v) v *= c;
    CHECK(std::abs(aas(scaled_a, b) - base) < 1e-6);
  }
  CHECK(aas(a, b) == doctest::Approx(oracle::naive_aas(a, b)).epsilon(1e-10));
}

TEST_CASE("similarity: symmetry is bit-exact, oracle agrees") {
  const auto a = oracle::random_latents<double>(51, 1, 3, 3, 2);
  const auto b = oracle::random_latents<double>(52, 1, 3, 3, 2);
  const auto ab = similarity(a, b);
  const auto ba = similarity(b, a);
  CHECK(ab.value == ba.value);  // bit-exact
  CHECK(ab.aas_ab == ba.aas_ba);
  CHECK(ab.value == doctest::Approx((ab.aas_ab + ab.aas_ba) / 2.0)
                        .epsilon(1e-12));
  CHECK(ab.value ==
        doctest::Approx(oracle::naive_similarity(a, b)).epsilon(1e-10));
  const auto self = similarity(a, a);
  CHECK(self.value == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("similarity: joint token permutation of one operand") {
  const auto a = oracle::random_latents<double>(61, 2, 5, 5, 3);
  const auto b = oracle::random_latents<double>(62, 2, 5, 5, 3);
  const double base = similarity(a, b).value;

  auto permuted = b;
  const std::vector<int> perm = {4, 2, 0, 3, 1};
  for (int h = 0; h < b.heads(); ++h)
    for (int r = 0; r < 5; ++r) {
      const auto pr = static_cast<std::size_t>(perm[static_cast<std::size_t>(r)]);
      permuted.q[static_cast<std::size_t>(h)].row(r) = b.q[static_cast<std::size_t>(h)].row(pr);
      permuted.k[static_cast<std::size_t>(h)].row(r) = b.k[static_cast<std::size_t>(h)].row(pr);
      permuted.v[static_cast<std::size_t>(h)].row(r) = b.v[static_cast<std::size_t>(h)].row(pr);
    }
  CHECK(std::abs(similarity(a, permuted).value - base) < 1e-6);
}

TEST_CASE("cross_aas_pair: identical conditioning gives 1, swap is bit-exact") {
  const auto za = oracle::random_latents<double>(71, 2, 4, 4, 3);
  const auto zb = oracle::random_latents<double>(72, 2, 4, 4, 3);
  const auto ip = oracle::random_latents<double>(73, 2, 4, 4, 3);

  const auto same = cross_aas_pair(za, ip, zb, ip);
  CHECK(same.value == doctest::Approx(1.0).epsilon(1e-6));

  const auto ipb = oracle::random_latents<double>(74, 2, 4, 4, 3);
  const auto fwd = cross_aas_pair(za, ip, zb, ipb);
  const auto swapped = cross_aas_pair(zb, ipb, za, ip);
  CHECK(fwd.value == swapped.value);  // bit-exact

  // oracle: mixing q from z with k/v from ip
  auto mixed_a = za;
  mixed_a.k = ip.k;
  mixed_a.v = ip.v;
  auto mixed_b = zb;
  mixed_b.k = ipb.k;
  mixed_b.v = ipb.v;
  CHECK(fwd.value ==
        doctest::Approx(oracle::naive_similarity(mixed_a, mixed_b))
            .epsilon(1e-10));
}

TEST_CASE("flattened cosine mode stays in range and differs sanely") {
  const auto a = oracle::random_latents<double>(81, 2, 4, 4, 3);
  const auto b = oracle::random_latents<double>(82, 2, 4, 4, 3);
  const double flat = aas(a, b, CosineMode::flattened);
  CHECK(flat >= -1.0);
  CHECK(flat <= 1.0);
  CHECK(aas(a, a, CosineMode::flattened) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("oracle equivalence sweep: heads x tokens x d_head, 120+ instances") {
  int instances = 0;
  for (int heads : {1, 2}) {
    for (int tokens = 1; tokens <= 5; ++tokens) {
      for (int d_head = 1; d_head <= 4; ++d_head) {
        for (int rep = 0; rep < 3; ++rep) {
          const std::uint64_t seed =
              derive_stream(1000, std::to_string(heads) + "/" +
                                      std::to_string(tokens) + "/" +
                                      std::to_string(d_head) + "/" +
                                      std::to_string(rep));
          const auto a = oracle::random_latents<double>(seed, heads, tokens,
                                                        tokens, d_head);
          const auto b = oracle::random_latents<double>(seed + 1, heads,
                                                        tokens, tokens, d_head);
          const double fast = similarity(a, b).value;
          const double ref = oracle::naive_similarity(a, b);
          CHECK(std::abs(fast - ref) < 1e-5);
          CHECK(fast >= -1.0);
          CHECK(fast <= 1.0);
          ++instances;
        }
      }
    }
  }
  CHECK(instances >= 100);
}

TEST_CASE("float pipeline matches double oracle within 1e-5") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const auto af = oracle::random_latents<float>(seed, 2, 4, 4, 3);
    const auto bf = oracle::random_latents<float>(seed + 1000, 2, 4, 4, 3);
    const double fast = similarity(af, bf).value;
    const double ref = oracle::naive_similarity(af, bf);
    CHECK(std::abs(fast - ref) < 1e-5);
  }
}
