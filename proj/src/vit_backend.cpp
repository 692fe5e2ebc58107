// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/vit_backend.hpp"

#include <fstream>

#include "diffsim/sha256.hpp"
#include "json.hpp"

namespace diffsim {

using nn::fetch;
using nn::fetch_layer_norm;
using nn::fetch_linear;
using nn::fetch_vector;

VitConfig VitConfig::clip_vit_l14() {
  VitConfig c;
  c.depth = 24;
  c.width = 1024;
  c.heads = 16;
  c.patch = 14;
  c.default_resolution = 224;
  c.pre_ln = true;
  c.patch_bias = false;
  c.layer_scale = false;
  c.extra_tokens = 1;
  c.image_mean = {0.48145466, 0.4578275, 0.40821073};
  c.image_std = {0.26862954, 0.26130258, 0.27577711};
  return c;
}

VitConfig VitConfig::dinov2_l14() {
  VitConfig c;
  c.depth = 24;
  c.width = 1024;
  c.heads = 16;
  c.patch = 14;
  c.default_resolution = 224;
  c.pre_ln = false;
  c.patch_bias = true;
  c.layer_scale = true;
  c.extra_tokens = 1;
  c.image_mean = {0.485, 0.456, 0.406};
  c.image_std = {0.229, 0.224, 0.225};
  return c;
}

VitConfig VitConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    throw ValidationError("unparseable backend config " + path.string() +
                          ": " + e.what());
  }
  VitConfig c;
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.patch = j.at("patch").get<int>();
  c.mlp_ratio = j.value("mlp_ratio", 4);
  c.default_resolution = j.at("default_resolution").get<int>();
  c.pre_ln = j.value("pre_ln", false);
  c.patch_bias = j.value("patch_bias", true);
  c.layer_scale = j.value("layer_scale", false);
  c.extra_tokens = j.value("extra_tokens", 1);
  if (j.contains("image_mean"))
    for (int i = 0; i < 3; ++i)
      c.image_mean[static_cast<std::size_t>(i)] =
          j["image_mean"][static_cast<std::size_t>(i)].get<double>();
  if (j.contains("image_std"))
    for (int i = 0; i < 3; ++i)
      c.image_std[static_cast<std::size_t>(i)] =
          j["image_std"][static_cast<std::size_t>(i)].get<double>();
  return c;
}

VitCore::VitCore(VitConfig config, const std::filesystem::path& weights_file)
    : config_(config) {
  TensorMap tm = load_safetensors(weights_file);
  fingerprint_ = "sha256:" + sha256_file_hex(weights_file).substr(0, 16);

  patch_embed_ = fetch_linear(tm, "patch_embed", config_.patch_bias);
  extra_tokens_ = matrix_from_tensor(fetch(tm, "extra_tokens"));
  pos_embed_ = matrix_from_tensor(fetch(tm, "pos_embed"));
  if (config_.pre_ln) pre_ln_ = fetch_layer_norm(tm, "pre_ln");

  blocks_.reserve(static_cast<std::size_t>(config_.depth));
  for (int i = 0; i < config_.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    Block b;
    b.ln1 = fetch_layer_norm(tm, p + "ln1");
    b.to_q = fetch_linear(tm, p + "attn.to_q");
    b.to_k = fetch_linear(tm, p + "attn.to_k");
    b.to_v = fetch_linear(tm, p + "attn.to_v");
    b.to_out = fetch_linear(tm, p + "attn.to_out");
    b.ln2 = fetch_layer_norm(tm, p + "ln2");
    b.fc1 = fetch_linear(tm, p + "mlp.fc1");
    b.fc2 = fetch_linear(tm, p + "mlp.fc2");
    if (config_.layer_scale) {
      b.ls1 = fetch_vector(tm, p + "ls1");
      b.ls2 = fetch_vector(tm, p + "ls2");
    }
    blocks_.push_back(std::move(b));
  }

  if (extra_tokens_.rows() != config_.extra_tokens ||
      extra_tokens_.cols() != config_.width)
    throw ValidationError("extra_tokens tensor disagrees with config");
}

MatrixXf VitCore::embed(const Image& img, int resolution) const {
  const Image pre = standard_preprocess(img, resolution);
  const int p = config_.patch;
  const int grid = resolution / p;

  // Patch pixels flattened in (channel, y, x) order to match the
  // converter's conv-kernel flattening.
  MatrixXf patches(static_cast<Eigen::Index>(grid) * grid, 3LL * p * p);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * grid + gx;
      Eigen::Index col = 0;
      for (int c = 0; c < 3; ++c) {
        const double mean = config_.image_mean[static_cast<std::size_t>(c)];
        const double sd = config_.image_std[static_cast<std::size_t>(c)];
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            patches(row, col++) = static_cast<float>(
                (pre.at(gx * p + dx, gy * p + dy, c) / 255.0 - mean) / sd);
      }
    }
  }

  MatrixXf tokens(config_.extra_tokens + patches.rows(), config_.width);
  tokens.topRows(config_.extra_tokens) = extra_tokens_;
  tokens.bottomRows(patches.rows()) = patch_embed_.apply(patches);

  const int src_grid = static_cast<int>(std::lround(
      std::sqrt(static_cast<double>(pos_embed_.rows() - config_.extra_tokens))));
  MatrixXf pos_grid = pos_embed_.bottomRows(pos_embed_.rows() - config_.extra_tokens);
  if (src_grid != grid)
    pos_grid = nn::interpolate_grid_bicubic(pos_grid, src_grid, grid);
  tokens.topRows(config_.extra_tokens) += pos_embed_.topRows(config_.extra_tokens);
  tokens.bottomRows(pos_grid.rows()) += pos_grid;

  if (pre_ln_) tokens = pre_ln_->apply(tokens);
  return tokens;
}

MatrixXf VitCore::run_blocks(MatrixXf tokens, int stop_before_block) const {
  for (int i = 0; i < stop_before_block; ++i) {
    const Block& b = blocks_[static_cast<std::size_t>(i)];
    const MatrixXf h = b.ln1.apply(tokens);
    MatrixXf attn = nn::multihead_attention(h, h, b.to_q, b.to_k, b.to_v,
                                            b.to_out, config_.heads);
    if (b.ls1.size() > 0) attn.array().rowwise() *= b.ls1.transpose().array();
    tokens += attn;
    MatrixXf mlp = b.fc2.apply(nn::gelu(b.fc1.apply(b.ln2.apply(tokens))));
    if (b.ls2.size() > 0) mlp.array().rowwise() *= b.ls2.transpose().array();
    tokens += mlp;
  }
  return tokens;
}

nn::AttentionCapture VitCore::capture_layer(const Image& img, int resolution,
                                            int layer) const {
  MatrixXf tokens = run_blocks(embed(img, resolution), layer);
  const Block& b = blocks_[static_cast<std::size_t>(layer)];
  const MatrixXf h = b.ln1.apply(tokens);
  nn::AttentionCapture cap;
  nn::multihead_attention(h, h, b.to_q, b.to_k, b.to_v, b.to_out,
                          config_.heads, &cap);
  return cap;
}

VitBackend::VitBackend(std::string id, std::filesystem::path weights_dir)
    : id_(std::move(id)), dir_(std::move(weights_dir)) {}

std::filesystem::path VitBackend::weights_file() const {
  const auto dir = dir_.empty() ? weights_root() / id_ : dir_;
  return dir / "model.safetensors";
}

VitConfig VitBackend::current_config() const {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (core_) return core_->config();
  }
  const auto dir = dir_.empty() ? weights_root() / id_ : dir_;
  const auto cfg = dir / "config.json";
  if (std::filesystem::exists(cfg)) return VitConfig::from_json_file(cfg);
  return id_ == "clip-vit" ? VitConfig::clip_vit_l14()
                           : VitConfig::dinov2_l14();
}

const VitCore& VitBackend::core() const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (!core_) {
    const auto file = weights_file();
    if (!std::filesystem::exists(file))
      throw WeightsError("weights for backend " + id_ + " not found",
                         file.string());
    const auto dir = file.parent_path();
    const auto cfg = dir / "config.json";
    VitConfig config = std::filesystem::exists(cfg)
                           ? VitConfig::from_json_file(cfg)
                           : (id_ == "clip-vit" ? VitConfig::clip_vit_l14()
                                                : VitConfig::dinov2_l14());
    core_ = std::make_shared<VitCore>(config, file);
  }
  return *core_;
}

std::vector<AttentionSite> VitBackend::list_sites() const {
  const VitConfig cfg = current_config();
  std::vector<AttentionSite> sites;
  for (int i = 0; i < cfg.depth; ++i) {
    AttentionSite s;
    s.backend_id = id_;
    s.kind = AttentionKind::self_attn;
    s.block = std::to_string(i);
    s.layer_ordinal = 0;
    s.resolution = cfg.default_resolution;
    sites.push_back(std::move(s));
  }
  return sites;
}

void VitBackend::check_resolution(int resolution) const {
  const VitConfig cfg = current_config();
  if (resolution < cfg.patch || resolution > 1024 ||
      resolution % cfg.patch != 0)
    throw ValidationError("backend " + id_ + ": resolution " +
                          std::to_string(resolution) +
                          " must be a multiple of the patch size " +
                          std::to_string(cfg.patch) + " in [" +
                          std::to_string(cfg.patch) + ", 1024]");
}

Latent VitBackend::encode(const Image& img, int resolution) const {
  check_resolution(resolution);
  Latent latent;
  latent.data = core().embed(img, resolution);
  return latent;
}

ProjectedLatents VitBackend::extract(const Image& img,
                                     const std::string& source_id,
                                     const AttentionSite& site,
                                     std::uint64_t /*noise_seed*/) const {
  check_site(site);
  const int layer = std::stoi(site.block);
  nn::AttentionCapture cap =
      core().capture_layer(img, site.resolution, layer);
  ProjectedLatents latents;
  latents.q = std::move(cap.q);
  latents.k = std::move(cap.k);
  latents.v = std::move(cap.v);
  latents.site = site;
  latents.source_id = source_id;
  latents.validate();
  return latents;
}

std::string VitBackend::weights_fingerprint() const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (core_) return core_->fingerprint();
  return std::filesystem::exists(weights_file()) ? "present:unloaded"
                                                 : "absent";
}

std::shared_ptr<Backend> make_vit_backend(const std::string& id) {
  return std::make_shared<VitBackend>(id);
}

}  // namespace diffsim
