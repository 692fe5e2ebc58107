// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "diffsim/image.hpp"
#include "diffsim/schedule.hpp"
#include "diffsim/types.hpp"

namespace diffsim {

class FeatureStore;

// Encoded image representation entering the noising/extraction pipeline.
// Transformer backends use a tokens x d matrix (channels == 0); spatial
// U-Net latents keep their geometry as channels x (height * width).
struct Latent {
  MatrixXf data;
  int channels = 0;
  int height = 0;
  int width = 0;

  bool spatial() const { return channels > 0; }
};

// Center-crop to square, then bicubic-resize to resolution x resolution.
Image standard_preprocess(const Image& img, int resolution);

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const std::string& id() const = 0;
  virtual bool is_diffusion() const = 0;

  // Present iff is_diffusion().
  virtual const NoiseSchedule* schedule() const { return nullptr; }

  // Nonempty, deterministic, sorted by site_order_less. Sites carry the
  // backend's default timestep/resolution; extraction accepts any valid
  // timestep at the same layer address.
  virtual std::vector<AttentionSite> list_sites() const = 0;

  virtual void check_resolution(int resolution) const = 0;

  virtual Latent encode(const Image& img, int resolution) const = 0;

  virtual ProjectedLatents extract(const Image& img,
                                   const std::string& source_id,
                                   const AttentionSite& site,
                                   std::uint64_t noise_seed) const = 0;

  virtual int ip_token_count() const { return 0; }

  virtual IPTokenSet extract_ip_tokens(const Image& img,
                                       const std::string& source_id) const;

  // Identity of the weights behind this backend, for report provenance.
  virtual std::string weights_fingerprint() const = 0;

 protected:
  // Site must match a published layer address; diffusion backends require
  // a timestep in range, transformer backends forbid one.
  void check_site(const AttentionSite& site) const;
};

// Process-wide, built once on first use and read-only afterwards.
class BackendRegistry {
 public:
  static BackendRegistry& instance();

  const Backend& get(const std::string& backend_id) const;
  std::vector<std::string> ids() const;

  // Pre-registration hook for tests; must happen before first get().
  void register_backend(std::shared_ptr<Backend> backend);

 private:
  BackendRegistry();
  std::vector<std::shared_ptr<Backend>> backends_;
};

// Root of model checkpoints, from DIFFSIM_WEIGHTS_DIR (empty when unset).
std::filesystem::path weights_root();

// Spec-level free functions over the registry.
std::vector<AttentionSite> list_sites(const std::string& backend_id);
Latent encode_image(const std::string& backend_id, const Image& img,
                    int resolution);
ProjectedLatents extract_projected_latents(const std::string& backend_id,
                                           const Image& img,
                                           const AttentionSite& site,
                                           std::uint64_t noise_seed);
IPTokenSet extract_ip_tokens(const std::string& backend_id, const Image& img);

// Per-image noise stream: with shared noise the raw metric seed is used
// for both images; otherwise the image hash is folded in. The result is
// what goes into the cache key, keeping the key injective over content.
std::uint64_t effective_noise_seed(const MetricConfig& config,
                                   const std::string& image_hash);

// One image's latents under a config, cache-aware: consults `store`
// before extraction and writes through after (nullptr disables caching).
ProjectedLatents extract_for_config(const Backend& backend,
                                    const MetricConfig& config,
                                    const std::filesystem::path& image_path,
                                    FeatureStore* store);

// Full scoring pipeline: decode, (optional) subject crop, encode, noise,
// extract, and the bidirectional score; consults `store` before extraction
// and writes through after (pass nullptr to disable caching).
SimilarityScore compute_pair_score(const MetricConfig& config,
                                   const std::filesystem::path& image_a,
                                   const std::filesystem::path& image_b,
                                   FeatureStore* store = nullptr);

SimilarityScore compute_pair_score(const Backend& backend,
                                   const MetricConfig& config,
                                   const std::filesystem::path& image_a,
                                   const std::filesystem::path& image_b,
                                   FeatureStore* store = nullptr);

}  // namespace diffsim
