// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/backend.hpp"

#include <cstdlib>
#include <mutex>
#include <sstream>

#include "diffsim/aas.hpp"
#include "diffsim/feature_store.hpp"
#include "diffsim/sha256.hpp"
#include "diffsim/toy_backend.hpp"
#include "diffsim/unet_backend.hpp"
#include "diffsim/vit_backend.hpp"

namespace diffsim {

namespace {

// Central fraction kept by the --crop-subject preprocessing flag. A crude
// stand-in for subject detection; keeps the flag deterministic.
constexpr double kSubjectCropFraction = 0.7;

}  // namespace

Image standard_preprocess(const Image& img, int resolution) {
  return resize_bicubic(center_crop_square(img), resolution, resolution);
}

IPTokenSet Backend::extract_ip_tokens(const Image&, const std::string&) const {
  throw ConfigError("backend " + id() + " lacks an image-token projector");
}

void Backend::check_site(const AttentionSite& site) const {
  if (site.backend_id != id())
    throw ConfigError("site " + site.canonical() + " does not belong to backend " +
                      id());
  bool found = false;
  for (const auto& s : list_sites())
    if (s.same_layer(site)) {
      found = true;
      break;
    }
  if (!found) {
    std::ostringstream os;
    os << "site not found: " << site.canonical() << "; backend " << id()
       << " publishes:";
    for (const auto& s : list_sites()) os << ' ' << s.canonical();
    throw ConfigError(os.str());
  }
  if (is_diffusion()) {
    if (!site.timestep)
      throw ConfigError("backend " + id() + " is a diffusion backend; site " +
                        site.canonical() + " needs a timestep");
    const int total = schedule()->total_steps();
    if (*site.timestep < 0 || *site.timestep > total)
      throw ConfigError("timestep " + std::to_string(*site.timestep) +
                        " outside [0, " + std::to_string(total) + "]");
  } else if (site.timestep) {
    throw ConfigError("backend " + id() +
                      " is not a diffusion backend; site " + site.canonical() +
                      " must not carry a timestep");
  }
  check_resolution(site.resolution);
}

BackendRegistry::BackendRegistry() {
  backends_.push_back(make_toy_self_backend());
  backends_.push_back(make_toy_cross_backend());
  backends_.push_back(make_unet_backend("sd15"));
  backends_.push_back(make_unet_backend("sdxl"));
  backends_.push_back(make_vit_backend("clip-vit"));
  backends_.push_back(make_vit_backend("dinov2"));
}

BackendRegistry& BackendRegistry::instance() {
  static BackendRegistry registry;
  return registry;
}

const Backend& BackendRegistry::get(const std::string& backend_id) const {
  for (const auto& b : backends_)
    if (b->id() == backend_id) return *b;
  std::ostringstream os;
  os << "unknown backend '" << backend_id << "'; known:";
  for (const auto& b : backends_) os << ' ' << b->id();
  throw ConfigError(os.str());
}

std::vector<std::string> BackendRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& b : backends_) out.push_back(b->id());
  return out;
}

void BackendRegistry::register_backend(std::shared_ptr<Backend> backend) {
  backends_.push_back(std::move(backend));
}

std::filesystem::path weights_root() {
  const char* env = std::getenv("DIFFSIM_WEIGHTS_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::path();
}

std::vector<AttentionSite> list_sites(const std::string& backend_id) {
  return BackendRegistry::instance().get(backend_id).list_sites();
}

Latent encode_image(const std::string& backend_id, const Image& img,
                    int resolution) {
  return BackendRegistry::instance().get(backend_id).encode(img, resolution);
}

ProjectedLatents extract_projected_latents(const std::string& backend_id,
                                           const Image& img,
                                           const AttentionSite& site,
                                           std::uint64_t noise_seed) {
  const auto& backend = BackendRegistry::instance().get(backend_id);
  const std::string source_id = sha256_hex(
      img.rgb.empty() ? std::string() :
      std::string(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size()));
  return backend.extract(img, source_id, site, noise_seed);
}

IPTokenSet extract_ip_tokens(const std::string& backend_id, const Image& img) {
  const auto& backend = BackendRegistry::instance().get(backend_id);
  const std::string source_id = sha256_hex(
      img.rgb.empty() ? std::string() :
      std::string(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size()));
  return backend.extract_ip_tokens(img, source_id);
}

std::uint64_t effective_noise_seed(const MetricConfig& config,
                                   const std::string& image_hash) {
  if (config.shared_noise) return config.noise_seed;
  return splitmix64(config.noise_seed ^ fnv1a64(image_hash));
}

ProjectedLatents extract_for_config(const Backend& backend,
                                    const MetricConfig& config,
                                    const std::filesystem::path& image_path,
                                    FeatureStore* store) {
  const std::string hash = sha256_file_hex(image_path);
  // Transformer backends take no noise; a constant seed keeps their cache
  // keys canonical.
  const std::uint64_t seed =
      backend.is_diffusion() ? effective_noise_seed(config, hash) : 0;

  CacheKey key;
  key.image_hash = hash;
  key.backend_id = backend.id();
  key.site = config.site.canonical();
  key.noise_seed = seed;
  key.resolution = config.site.resolution;

  if (store) {
    if (auto cached = store->get(key)) return std::move(*cached);
  }

  Image img = load_image(image_path);
  if (config.crop_subject) img = central_crop(img, kSubjectCropFraction);
  ProjectedLatents latents = backend.extract(img, hash, config.site, seed);
  if (store) store->put(key, latents);
  return latents;
}

SimilarityScore compute_pair_score(const Backend& backend,
                                   const MetricConfig& config,
                                   const std::filesystem::path& image_a,
                                   const std::filesystem::path& image_b,
                                   FeatureStore* store) {
  config.validate();
  if (config.site.backend_id != backend.id())
    throw ConfigError("config site backend '" + config.site.backend_id +
                      "' does not match backend '" + backend.id() + "'");

  const ProjectedLatents la = extract_for_config(backend, config, image_a, store);
  const ProjectedLatents lb = extract_for_config(backend, config, image_b, store);

  SimilarityScore score =
      config.site.kind == AttentionKind::cross_attn
          ? cross_aas_pair(la, la, lb, lb, config.cosine_mode)
          : similarity(la, lb, config.cosine_mode);
  score.config = config;
  return score;
}

SimilarityScore compute_pair_score(const MetricConfig& config,
                                   const std::filesystem::path& image_a,
                                   const std::filesystem::path& image_b,
                                   FeatureStore* store) {
  const auto& backend =
      BackendRegistry::instance().get(config.site.backend_id);
  return compute_pair_score(backend, config, image_a, image_b, store);
}

}  // namespace diffsim
