// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Denoising U-Net feature extraction (Stable Diffusion 1.5 / SD-XL
// topologies) from a converted safetensors weights package: VAE-encode the
// image, forward-noise the latent at the site's timestep, run one
// denoising pass with empty-prompt conditioning, and capture Q/K/V at the
// addressed attention layer. Cross-attention sites additionally route
// image tokens from an IP-Adapter resampler. docs/weights.md describes
// the package layout; scripts/convert_weights.py produces it.

#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "diffsim/backend.hpp"
#include "diffsim/nn.hpp"
#include "diffsim/vit_backend.hpp"

namespace diffsim {

struct UNetTopology {
  int model_channels = 320;
  std::vector<int> channel_mult = {1, 2, 4, 4};
  int num_res_blocks = 2;
  // Transformer blocks per level; 0 means the level has no attention.
  std::vector<int> transformer_depth = {1, 1, 1, 0};
  int mid_depth = 1;
  int num_heads = 8;      // used when head_channels == 0
  int head_channels = 0;  // SD-XL style fixed head width
  int context_dim = 768;

  int latent_channels = 4;
  int vae_channels = 128;
  std::vector<int> vae_mult = {1, 2, 4, 4};
  int vae_res_blocks = 2;
  double vae_scale = 0.18215;
  int vae_downscale = 8;

  int default_resolution = 512;
  int default_timestep = 500;
  int total_steps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;

  int ip_tokens = 16;
  int ip_resampler_dim = 768;
  int ip_resampler_depth = 4;
  int ip_resampler_heads = 12;
  // Image-encoder hidden state fed to the resampler, as an offset from the
  // end (2 = penultimate layer output).
  int ip_image_layer_offset = 2;

  static UNetTopology sd15();
  static UNetTopology sdxl();
  static UNetTopology from_json_file(const std::filesystem::path& path);
};

class UNetCore;

class UNetBackend : public Backend {
 public:
  // `weights_dir` overrides DIFFSIM_WEIGHTS_DIR/<id> (used by tests).
  explicit UNetBackend(std::string id,
                       std::filesystem::path weights_dir = {});
  ~UNetBackend() override;

  const std::string& id() const override { return id_; }
  bool is_diffusion() const override { return true; }
  const NoiseSchedule* schedule() const override;
  std::vector<AttentionSite> list_sites() const override;
  void check_resolution(int resolution) const override;
  Latent encode(const Image& img, int resolution) const override;
  ProjectedLatents extract(const Image& img, const std::string& source_id,
                           const AttentionSite& site,
                           std::uint64_t noise_seed) const override;
  int ip_token_count() const override;
  IPTokenSet extract_ip_tokens(const Image& img,
                               const std::string& source_id) const override;
  std::string weights_fingerprint() const override;

  std::filesystem::path weights_dir() const;

 private:
  const UNetCore& core() const;  // lazy-loads; throws WeightsError if absent
  UNetTopology current_topology() const;

  std::string id_;
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  mutable std::shared_ptr<UNetCore> core_;
  mutable std::optional<NoiseSchedule> schedule_;
};

std::shared_ptr<Backend> make_unet_backend(const std::string& id);

// Site enumeration from a topology alone (usable without weights).
std::vector<AttentionSite> unet_sites(const std::string& backend_id,
                                      const UNetTopology& topo);

}  // namespace diffsim
