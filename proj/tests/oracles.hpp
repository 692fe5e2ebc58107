// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent naive references for the attention math. Everything here is
// double-precision double loops with no Eigen expression shortcuts, kept
// deliberately separate from the implementation it checks.

#pragma once

#include <cmath>
#include <vector>

#include "diffsim/rng.hpp"
#include "diffsim/types.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const diffsim::MatrixX<double>& m) {
  Mat out(static_cast<std::size_t>(m.rows()),
          std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

inline Mat naive_attention(const Mat& q, const Mat& k, const Mat& v) {
  const std::size_t tq = q.size(), tkv = k.size();
  const std::size_t d = q[0].size(), dv = v[0].size();
  Mat out(tq, std::vector<double>(dv, 0.0));
  for (std::size_t i = 0; i < tq; ++i) {
    std::vector<double> logits(tkv, 0.0);
    for (std::size_t j = 0; j < tkv; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * k[j][c];
      logits[j] = dot / std::sqrt(static_cast<double>(d));
    }
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    std::vector<double> w(tkv);
    for (std::size_t j = 0; j < tkv; ++j) {
      w[j] = std::exp(logits[j] - mx);
      z += w[j];
    }
    for (std::size_t j = 0; j < tkv; ++j) {
      w[j] /= z;
      for (std::size_t c = 0; c < dv; ++c) out[i][c] += w[j] * v[j][c];
    }
  }
  return out;
}

// Head-concatenated attention over per-head matrices.
template <typename Scalar>
Mat naive_multihead(const diffsim::ProjectedLatentsT<Scalar>& query,
                    const diffsim::ProjectedLatentsT<Scalar>& kv) {
  Mat out;
  for (int h = 0; h < query.heads(); ++h) {
    const Mat oh = naive_attention(
        to_mat(query.q[static_cast<std::size_t>(h)].template cast<double>()),
        to_mat(kv.k[static_cast<std::size_t>(h)].template cast<double>()),
        to_mat(kv.v[static_cast<std::size_t>(h)].template cast<double>()));
    if (out.empty()) {
      out = oh;
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i].insert(out[i].end(), oh[i].begin(), oh[i].end());
    }
  }
  return out;
}

inline double naive_token_cosine(const Mat& x, const Mat& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      dot += x[i][j] * y[i][j];
      nx += x[i][j] * x[i][j];
      ny += y[i][j] * y[i][j];
    }
    acc += dot / (std::sqrt(nx) * std::sqrt(ny));
  }
  return acc / static_cast<double>(x.size());
}

template <typename Scalar>
double naive_aas(const diffsim::ProjectedLatentsT<Scalar>& a,
                 const diffsim::ProjectedLatentsT<Scalar>& b) {
  return naive_token_cosine(naive_multihead(a, a), naive_multihead(a, b));
}

template <typename Scalar>
double naive_similarity(const diffsim::ProjectedLatentsT<Scalar>& a,
                        const diffsim::ProjectedLatentsT<Scalar>& b) {
  return 0.5 * (naive_aas(a, b) + naive_aas(b, a));
}

// Seeded random latents; entries ~ N(0,1).
template <typename Scalar>
diffsim::ProjectedLatentsT<Scalar> random_latents(std::uint64_t seed,
                                                  int heads, int tokens_q,
                                                  int tokens_kv, int d_head) {
  diffsim::Rng rng(seed);
  diffsim::ProjectedLatentsT<Scalar> p;
  auto fill = [&](int rows, int cols) {
    diffsim::MatrixX<Scalar> m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        m(i, j) = static_cast<Scalar>(rng.normal());
    return m;
  };
  for (int h = 0; h < heads; ++h) {
    p.q.push_back(fill(tokens_q, d_head));
    p.k.push_back(fill(tokens_kv, d_head));
    p.v.push_back(fill(tokens_kv, d_head));
  }
  p.site.backend_id = "test";
  p.site.block = "0";
  p.source_id = "seed-" + std::to_string(seed);
  return p;
}

}  // namespace oracle
