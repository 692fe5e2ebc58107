// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffsim/errors.hpp"

namespace diffsim {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using MatrixXf = MatrixX<float>;
using MatrixXd = MatrixX<double>;

enum class AttentionKind { self_attn, cross_attn };

const char* to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& s);

// Address of one attention layer inside a backbone. `block` is one of the
// U-Net block names (down_0..down_2, mid, up_0..up_2) or a decimal layer
// index for transformer backends. `timestep` is set iff the backend is a
// diffusion backend.
struct AttentionSite {
  std::string backend_id;
  AttentionKind kind = AttentionKind::self_attn;
  std::string block;
  int layer_ordinal = 0;
  std::optional<int> timestep;
  int resolution = 512;

  // Injective over all fields; stable across runs and platforms.
  std::string canonical() const;
  static AttentionSite parse(const std::string& canonical);

  // Layer address only (kind/block/ordinal), ignoring timestep/resolution.
  bool same_layer(const AttentionSite& other) const;

  bool operator==(const AttentionSite& other) const;
};

// Deterministic ordering used by list_sites: kind, then block (down_0 <
// down_1 < down_2 < mid < up_0 < up_1 < up_2; integer blocks numerically),
// then layer ordinal.
bool site_order_less(const AttentionSite& a, const AttentionSite& b);

enum class MetricKind { diffsim_s, diffsim_c, clip_aas, dino_aas, toy_aas };
enum class CosineMode { per_token_mean, flattened };

const char* to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& s);
const char* to_string(CosineMode mode);
CosineMode cosine_mode_from_string(const std::string& s);

// A fully specified similarity metric.
struct MetricConfig {
  AttentionSite site;
  MetricKind metric_kind = MetricKind::toy_aas;
  std::uint64_t noise_seed = 0;
  bool shared_noise = true;
  CosineMode cosine_mode = CosineMode::per_token_mean;
  bool crop_subject = false;

  std::string canonical() const;

  // metric_kind must be consistent with site.kind: diffsim_c requires
  // cross-attention, everything else self-attention.
  void validate() const;
};

// Per-head Q/K/V projections of one image at one attention site. Heads are
// stored as separate tokens x d_head matrices.
template <typename Scalar>
struct ProjectedLatentsT {
  std::vector<MatrixX<Scalar>> q;
  std::vector<MatrixX<Scalar>> k;
  std::vector<MatrixX<Scalar>> v;
  AttentionSite site;
  std::string source_id;

  int heads() const { return static_cast<int>(q.size()); }
  Eigen::Index tokens_q() const { return q.empty() ? 0 : q[0].rows(); }
  Eigen::Index tokens_kv() const { return k.empty() ? 0 : k[0].rows(); }
  Eigen::Index head_dim() const { return q.empty() ? 0 : q[0].cols(); }
  Eigen::Index value_dim() const { return v.empty() ? 0 : v[0].cols(); }

  void validate() const {
    if (q.empty() || k.empty() || v.empty())
      throw DimensionError("ProjectedLatents: heads must be >= 1");
    if (q.size() != k.size() || q.size() != v.size())
      throw DimensionError("ProjectedLatents: q/k/v head counts differ");
    const Eigen::Index tq = q[0].rows(), tkv = k[0].rows();
    const Eigen::Index dh = q[0].cols(), dv = v[0].cols();
    if (tq < 1 || tkv < 1 || dh < 1 || dv < 1)
      throw DimensionError("ProjectedLatents: empty token or feature axis");
    for (std::size_t h = 0; h < q.size(); ++h) {
      if (q[h].rows() != tq || q[h].cols() != dh || k[h].rows() != tkv ||
          k[h].cols() != dh || v[h].rows() != tkv || v[h].cols() != dv)
        throw DimensionError("ProjectedLatents: inconsistent head shapes");
      if (!q[h].allFinite() || !k[h].allFinite() || !v[h].allFinite())
        throw ValidationError("ProjectedLatents: non-finite entries");
    }
  }
};

using ProjectedLatents = ProjectedLatentsT<float>;

// Head-concatenated attention outputs: tokens_q x (heads * d_value).
template <typename Scalar>
struct AlignedFeaturesT {
  MatrixX<Scalar> x;
  AttentionSite site;
};

using AlignedFeatures = AlignedFeaturesT<float>;

// Bidirectional similarity of Eq-9 form, 1/2-averaged so values stay in
// [-1, 1]. aas_ab aligns with A's queries, aas_ba with B's.
struct SimilarityScore {
  double value = 0.0;
  double aas_ab = 0.0;
  double aas_ba = 0.0;
  MetricConfig config;
};

// Image-derived conditioning tokens for cross-attention.
template <typename Scalar>
struct IPTokenSetT {
  MatrixX<Scalar> tokens;  // n_tokens x d_model
  std::string source_id;
};

using IPTokenSet = IPTokenSetT<float>;

// Identity of one cached extraction.
struct CacheKey {
  std::string image_hash;
  std::string backend_id;
  std::string site;  // AttentionSite::canonical()
  std::uint64_t noise_seed = 0;
  int resolution = 0;

  std::string canonical() const;
};

}  // namespace diffsim
