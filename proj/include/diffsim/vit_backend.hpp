// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vision-transformer feature extraction (CLIP image tower, DINO v2) from a
// converted safetensors weights package; see docs/weights.md and
// scripts/convert_weights.py for the on-disk layout. Site addresses are
// integer transformer-layer indices; no noising is applied.

#pragma once

#include <array>
#include <memory>
#include <mutex>

#include "diffsim/backend.hpp"
#include "diffsim/nn.hpp"

namespace diffsim {

struct VitConfig {
  int depth = 24;
  int width = 1024;
  int heads = 16;
  int patch = 14;
  int mlp_ratio = 4;
  int default_resolution = 224;
  bool pre_ln = false;       // CLIP applies a LayerNorm before the blocks
  bool patch_bias = true;    // DINO v2 patch embed carries a bias
  bool layer_scale = false;  // DINO v2 LayerScale
  int extra_tokens = 1;      // class token (+ registers when present)
  std::array<double, 3> image_mean = {0.485, 0.456, 0.406};
  std::array<double, 3> image_std = {0.229, 0.224, 0.225};

  static VitConfig clip_vit_l14();
  static VitConfig dinov2_l14();
  static VitConfig from_json_file(const std::filesystem::path& path);
};

// Loaded ViT weights plus the forward pass. Shared between the transformer
// backends and the IP-Adapter image encoder.
class VitCore {
 public:
  VitCore(VitConfig config, const std::filesystem::path& weights_file);

  const VitConfig& config() const { return config_; }

  // Patch embedding + extra tokens + (interpolated) position embedding.
  MatrixXf embed(const Image& img, int resolution) const;

  // Runs blocks [0, stop_before_block) over embedded tokens.
  MatrixXf run_blocks(MatrixXf tokens, int stop_before_block) const;

  // Per-head q/k/v of layer `layer` as seen during the forward pass.
  nn::AttentionCapture capture_layer(const Image& img, int resolution,
                                     int layer) const;

  std::string fingerprint() const { return fingerprint_; }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear to_q, to_k, to_v, to_out;
    nn::Linear fc1, fc2;
    nn::VectorXf ls1, ls2;  // empty when layer scale is off
  };

  VitConfig config_;
  nn::Linear patch_embed_;
  MatrixXf extra_tokens_;  // extra x width
  MatrixXf pos_embed_;     // (extra + grid^2) x width
  std::optional<nn::LayerNorm> pre_ln_;
  std::vector<Block> blocks_;
  std::string fingerprint_;
};

class VitBackend : public Backend {
 public:
  // `weights_dir` overrides DIFFSIM_WEIGHTS_DIR/<id> (used by tests).
  explicit VitBackend(std::string id,
                      std::filesystem::path weights_dir = {});

  const std::string& id() const override { return id_; }
  bool is_diffusion() const override { return false; }
  std::vector<AttentionSite> list_sites() const override;
  void check_resolution(int resolution) const override;
  Latent encode(const Image& img, int resolution) const override;
  ProjectedLatents extract(const Image& img, const std::string& source_id,
                           const AttentionSite& site,
                           std::uint64_t noise_seed) const override;
  std::string weights_fingerprint() const override;

  std::filesystem::path weights_file() const;

 private:
  const VitCore& core() const;  // lazy-loads; throws WeightsError if absent
  VitConfig current_config() const;

  std::string id_;
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  mutable std::shared_ptr<VitCore> core_;
};

std::shared_ptr<Backend> make_vit_backend(const std::string& id);

}  // namespace diffsim
