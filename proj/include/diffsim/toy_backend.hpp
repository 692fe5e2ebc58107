// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale backends with weights generated from a fixed, documented PRNG
// seed: a two-layer patch-attention trunk in a self-attention flavor
// ("toy-self") and a cross-attention flavor conditioned on image-derived
// tokens ("toy-cross"). They exist so the whole scoring pipeline is
// exercisable end-to-end with no external checkpoints.

#pragma once

#include <memory>

#include "diffsim/backend.hpp"

namespace diffsim {

// Seed of the generated toy weights. Changing it changes every toy score.
inline constexpr std::uint64_t kToyWeightsSeed = 0x5eedc0de;

struct ToyOptions {
  std::string id = "toy-self";
  AttentionKind kind = AttentionKind::self_attn;
  int patch = 4;
  int d_model = 16;
  int ip_tokens = 0;  // cross flavor only
  int default_resolution = 16;
  int default_timestep = 500;
  int total_steps = 1000;
  std::uint64_t weights_seed = kToyWeightsSeed;
};

class ToyBackend : public Backend {
 public:
  explicit ToyBackend(ToyOptions options);

  const std::string& id() const override { return options_.id; }
  bool is_diffusion() const override { return true; }
  const NoiseSchedule* schedule() const override { return &schedule_; }
  std::vector<AttentionSite> list_sites() const override;
  void check_resolution(int resolution) const override;
  Latent encode(const Image& img, int resolution) const override;
  ProjectedLatents extract(const Image& img, const std::string& source_id,
                           const AttentionSite& site,
                           std::uint64_t noise_seed) const override;
  int ip_token_count() const override { return options_.ip_tokens; }
  IPTokenSet extract_ip_tokens(const Image& img,
                               const std::string& source_id) const override;
  std::string weights_fingerprint() const override;

  static constexpr int kLayers = 2;

 private:
  MatrixXf patch_features(const Image& img, int resolution) const;
  int heads_of_layer(int layer) const;

  ToyOptions options_;
  NoiseSchedule schedule_;
  MatrixXf embed_;                    // (3*patch^2) x d_model
  std::vector<MatrixXf> wq_, wk_, wv_, wmix_;  // per layer, d_model x d_model
  MatrixXf ip_base_;                  // ip_tokens x (3*patch^2)
  MatrixXf w_ip_;                     // (3*patch^2) x d_model
};

std::shared_ptr<Backend> make_toy_self_backend();
std::shared_ptr<Backend> make_toy_cross_backend();

}  // namespace diffsim
