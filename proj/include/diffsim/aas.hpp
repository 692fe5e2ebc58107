// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Backend-independent attention math: scaled dot-product attention, the
// Aligned Attention Score, and the bidirectional similarity built on it.
// Everything here is a pure function of its inputs and safe to call
// concurrently.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "diffsim/errors.hpp"
#include "diffsim/types.hpp"

namespace diffsim {

// Softmax(q k^T / sqrt(d)), row-stable (max subtracted per row). Every row
// of the result sums to 1; this is the instrumented path the attention
// output is built from.
template <typename Scalar>
MatrixX<Scalar> attention_weights(const MatrixX<Scalar>& q,
                                  const MatrixX<Scalar>& k) {
  if (q.cols() != k.cols())
    throw DimensionError("attention: q has feature dim " +
                         std::to_string(q.cols()) + " but k has " +
                         std::to_string(k.cols()));
  if (q.cols() < 1) throw DimensionError("attention: empty feature dim");
  if (!q.allFinite() || !k.allFinite())
    throw ValidationError("attention: non-finite entries in q or k");

  const Scalar scale =
      Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  MatrixX<Scalar> logits = (q * k.transpose()) * scale;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar row_max = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - row_max).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

// One attention head: softmax(q k^T / sqrt(d)) v.
template <typename Scalar>
MatrixX<Scalar> scaled_dot_attention(const MatrixX<Scalar>& q,
                                     const MatrixX<Scalar>& k,
                                     const MatrixX<Scalar>& v) {
  if (k.rows() != v.rows())
    throw DimensionError("attention: k has " + std::to_string(k.rows()) +
                         " tokens but v has " + std::to_string(v.rows()));
  if (!v.allFinite())
    throw ValidationError("attention: non-finite entries in v");
  return attention_weights(q, k) * v;
}

// Per-head attention with the query side taken from `query_latents` and
// keys/values from `kv_latents`; head outputs concatenated in head order.
// No output projection is applied: the score compares raw attn(Q,K,V).
template <typename Scalar>
AlignedFeaturesT<Scalar> multihead_align(
    const ProjectedLatentsT<Scalar>& query_latents,
    const ProjectedLatentsT<Scalar>& kv_latents) {
  query_latents.validate();
  kv_latents.validate();
  if (query_latents.heads() != kv_latents.heads())
    throw DimensionError(
        "multihead_align: head count mismatch (" +
        std::to_string(query_latents.heads()) + " vs " +
        std::to_string(kv_latents.heads()) + ")");
  if (query_latents.head_dim() != kv_latents.head_dim())
    throw DimensionError(
        "multihead_align: head dim mismatch (" +
        std::to_string(query_latents.head_dim()) + " vs " +
        std::to_string(kv_latents.head_dim()) + ")");

  const int heads = query_latents.heads();
  const Eigen::Index tokens = query_latents.tokens_q();
  const Eigen::Index dv = kv_latents.value_dim();
  AlignedFeaturesT<Scalar> out;
  out.site = query_latents.site;
  out.x.resize(tokens, heads * dv);
  for (int h = 0; h < heads; ++h) {
    out.x.middleCols(static_cast<Eigen::Index>(h) * dv, dv) =
        scaled_dot_attention(query_latents.q[h], kv_latents.k[h],
                             kv_latents.v[h]);
  }
  return out;
}

// Mean over rows of cos(x_i, y_i), accumulated in double in row order.
// All-zero rows are an error, not a silent clamp.
template <typename Scalar>
double token_cosine(const MatrixX<Scalar>& x, const MatrixX<Scalar>& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw DimensionError("token_cosine: shape mismatch");
  if (x.rows() < 1) throw DimensionError("token_cosine: no rows");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double nx = x.row(i).template cast<double>().norm();
    const double ny = y.row(i).template cast<double>().norm();
    if (nx == 0.0)
      throw DegenerateFeatureError(
          "token_cosine: all-zero row " + std::to_string(i) +
          " in first operand", i);
    if (ny == 0.0)
      throw DegenerateFeatureError(
          "token_cosine: all-zero row " + std::to_string(i) +
          " in second operand", i);
    const double dot =
        x.row(i).template cast<double>().dot(y.row(i).template cast<double>());
    acc += std::clamp(dot / (nx * ny), -1.0, 1.0);
  }
  return acc / static_cast<double>(x.rows());
}

// Cosine over the whole matrices flattened to single vectors. Ablation
// alternative to the per-token mean.
template <typename Scalar>
double flattened_cosine(const MatrixX<Scalar>& x, const MatrixX<Scalar>& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw DimensionError("flattened_cosine: shape mismatch");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double a = static_cast<double>(x(i, j));
      const double b = static_cast<double>(y(i, j));
      dot += a * b;
      nx += a * a;
      ny += b * b;
    }
  }
  if (nx == 0.0)
    throw DegenerateFeatureError("flattened_cosine: zero first operand", -1);
  if (ny == 0.0)
    throw DegenerateFeatureError("flattened_cosine: zero second operand", -1);
  return std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

template <typename Scalar>
double aggregate_cosine(const MatrixX<Scalar>& x, const MatrixX<Scalar>& y,
                        CosineMode mode) {
  return mode == CosineMode::per_token_mean ? token_cosine(x, y)
                                            : flattened_cosine(x, y);
}

// AAS(a, b) = cos(attn(Q_a, K_a, V_a), attn(Q_a, K_b, V_b)).
template <typename Scalar>
double aas(const ProjectedLatentsT<Scalar>& a,
           const ProjectedLatentsT<Scalar>& b,
           CosineMode mode = CosineMode::per_token_mean) {
  const auto self_aligned = multihead_align(a, a);
  const auto cross_aligned = multihead_align(a, b);
  return aggregate_cosine(self_aligned.x, cross_aligned.x, mode);
}

// Bidirectional similarity, 1/2-averaged so the value stays in [-1, 1].
template <typename Scalar>
SimilarityScore similarity(const ProjectedLatentsT<Scalar>& a,
                           const ProjectedLatentsT<Scalar>& b,
                           CosineMode mode = CosineMode::per_token_mean) {
  SimilarityScore score;
  score.aas_ab = aas(a, b, mode);
  score.aas_ba = aas(b, a, mode);
  score.value = (score.aas_ab + score.aas_ba) / 2.0;
  score.config.site = a.site;
  score.config.cosine_mode = mode;
  return score;
}

// DiffSim-C form: queries come from the cross-attention latents (z_*),
// keys/values from the IP-token projections (ip_*).
template <typename Scalar>
SimilarityScore cross_aas_pair(const ProjectedLatentsT<Scalar>& z_a,
                               const ProjectedLatentsT<Scalar>& ip_a,
                               const ProjectedLatentsT<Scalar>& z_b,
                               const ProjectedLatentsT<Scalar>& ip_b,
                               CosineMode mode = CosineMode::per_token_mean) {
  SimilarityScore score;
  {
    const auto own = multihead_align(z_a, ip_a);
    const auto other = multihead_align(z_a, ip_b);
    score.aas_ab = aggregate_cosine(own.x, other.x, mode);
  }
  {
    const auto own = multihead_align(z_b, ip_b);
    const auto other = multihead_align(z_b, ip_a);
    score.aas_ba = aggregate_cosine(own.x, other.x, mode);
  }
  score.value = (score.aas_ab + score.aas_ba) / 2.0;
  score.config.site = z_a.site;
  score.config.cosine_mode = mode;
  return score;
}

}  // namespace diffsim
