// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/toy_backend.hpp"

#include <cmath>
#include <sstream>

#include "diffsim/aas.hpp"

namespace diffsim {

namespace {

MatrixXf seeded_weights(std::uint64_t seed, const std::string& label,
                        Eigen::Index rows, Eigen::Index cols) {
  Rng rng(derive_stream(seed, label));
  MatrixXf w = gaussian_matrix<float>(rows, cols, rng);
  w *= 1.0f / std::sqrt(static_cast<float>(rows));
  return w;
}

std::vector<MatrixXf> split_heads(const MatrixXf& m, int heads) {
  const Eigen::Index d_head = m.cols() / heads;
  std::vector<MatrixXf> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h)
    out.push_back(m.middleCols(static_cast<Eigen::Index>(h) * d_head, d_head));
  return out;
}

MatrixXf concat_head_attention(const MatrixXf& z_q, const MatrixXf& kv_src,
                               const MatrixXf& wq, const MatrixXf& wk,
                               const MatrixXf& wv, int heads) {
  const auto qh = split_heads(z_q * wq, heads);
  const auto kh = split_heads(kv_src * wk, heads);
  const auto vh = split_heads(kv_src * wv, heads);
  MatrixXf out(z_q.rows(), wq.cols());
  const Eigen::Index dv = vh[0].cols();
  for (int h = 0; h < heads; ++h)
    out.middleCols(static_cast<Eigen::Index>(h) * dv, dv) =
        scaled_dot_attention(qh[static_cast<std::size_t>(h)],
                             kh[static_cast<std::size_t>(h)],
                             vh[static_cast<std::size_t>(h)]);
  return out;
}

}  // namespace

ToyBackend::ToyBackend(ToyOptions options)
    : options_(std::move(options)),
      schedule_(NoiseSchedule::toy_linear(options_.total_steps)) {
  const Eigen::Index feat = 3LL * options_.patch * options_.patch;
  const std::uint64_t seed = derive_stream(options_.weights_seed, options_.id);
  embed_ = seeded_weights(seed, "embed", feat, options_.d_model);
  for (int l = 0; l < kLayers; ++l) {
    const std::string p = "layer" + std::to_string(l) + "/";
    wq_.push_back(seeded_weights(seed, p + "wq", options_.d_model, options_.d_model));
    wk_.push_back(seeded_weights(seed, p + "wk", options_.d_model, options_.d_model));
    wv_.push_back(seeded_weights(seed, p + "wv", options_.d_model, options_.d_model));
    wmix_.push_back(seeded_weights(seed, p + "wm", options_.d_model, options_.d_model));
  }
  if (options_.kind == AttentionKind::cross_attn) {
    ip_base_ = seeded_weights(seed, "ip_base", options_.ip_tokens, feat);
    w_ip_ = seeded_weights(seed, "w_ip", feat, options_.d_model);
  }
}

int ToyBackend::heads_of_layer(int layer) const {
  // Layer 1 runs more, narrower heads so the two sites are genuinely
  // different shapes.
  if (options_.kind == AttentionKind::self_attn) return layer == 0 ? 2 : 4;
  return 2;
}

std::vector<AttentionSite> ToyBackend::list_sites() const {
  std::vector<AttentionSite> sites;
  for (int l = 0; l < kLayers; ++l) {
    AttentionSite s;
    s.backend_id = options_.id;
    s.kind = options_.kind;
    s.block = std::to_string(l);
    s.layer_ordinal = 0;
    s.timestep = options_.default_timestep;
    s.resolution = options_.default_resolution;
    sites.push_back(std::move(s));
  }
  return sites;
}

void ToyBackend::check_resolution(int resolution) const {
  if (resolution < options_.patch || resolution > 1024 ||
      resolution % options_.patch != 0)
    throw ValidationError(
        "backend " + options_.id + ": resolution " +
        std::to_string(resolution) + " must be a multiple of " +
        std::to_string(options_.patch) + " in [" +
        std::to_string(options_.patch) + ", 1024]");
}

MatrixXf ToyBackend::patch_features(const Image& img, int resolution) const {
  const Image pre = standard_preprocess(img, resolution);
  const int p = options_.patch;
  const int grid = resolution / p;
  MatrixXf feats(static_cast<Eigen::Index>(grid) * grid, 3LL * p * p);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * grid + gx;
      Eigen::Index col = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int c = 0; c < 3; ++c)
            feats(row, col++) =
                static_cast<float>(pre.at(gx * p + dx, gy * p + dy, c)) / 255.0f;
    }
  }
  return feats;
}

Latent ToyBackend::encode(const Image& img, int resolution) const {
  check_resolution(resolution);
  Latent latent;
  latent.data = patch_features(img, resolution) * embed_;
  return latent;
}

IPTokenSet ToyBackend::extract_ip_tokens(const Image& img,
                                         const std::string& source_id) const {
  if (options_.kind != AttentionKind::cross_attn)
    return Backend::extract_ip_tokens(img, source_id);
  const MatrixXf feats = patch_features(img, options_.default_resolution);
  const MatrixXf pooled = feats.colwise().mean();
  MatrixXf pre = ip_base_;
  pre.rowwise() += pooled.row(0);
  IPTokenSet set;
  set.tokens = (pre * w_ip_).array().tanh().matrix();
  set.source_id = source_id;
  return set;
}

ProjectedLatents ToyBackend::extract(const Image& img,
                                     const std::string& source_id,
                                     const AttentionSite& site,
                                     std::uint64_t noise_seed) const {
  check_site(site);
  const int target_layer = std::stoi(site.block);
  const int t = *site.timestep;

  MatrixXf z = encode(img, site.resolution).data;
  Rng eps_rng(derive_stream(noise_seed, "eps@t" + std::to_string(t)));
  const MatrixXf eps = gaussian_matrix<float>(z.rows(), z.cols(), eps_rng);
  z = forward_noise(z, t, eps, schedule_);

  MatrixXf kv_source;  // cross flavor: projected from the clean IP tokens
  if (options_.kind == AttentionKind::cross_attn)
    kv_source = extract_ip_tokens(img, source_id).tokens;

  for (int l = 0; l < target_layer; ++l) {
    const auto& src =
        options_.kind == AttentionKind::cross_attn ? kv_source : z;
    const MatrixXf attn_out =
        concat_head_attention(z, src, wq_[static_cast<std::size_t>(l)],
                              wk_[static_cast<std::size_t>(l)],
                              wv_[static_cast<std::size_t>(l)],
                              heads_of_layer(l));
    z = (z + attn_out * wmix_[static_cast<std::size_t>(l)])
            .array()
            .tanh()
            .matrix();
  }

  const int heads = heads_of_layer(target_layer);
  const auto& src =
      options_.kind == AttentionKind::cross_attn ? kv_source : z;
  ProjectedLatents latents;
  latents.q = split_heads(z * wq_[static_cast<std::size_t>(target_layer)], heads);
  latents.k = split_heads(src * wk_[static_cast<std::size_t>(target_layer)], heads);
  latents.v = split_heads(src * wv_[static_cast<std::size_t>(target_layer)], heads);
  latents.site = site;
  latents.source_id = source_id;
  latents.validate();
  return latents;
}

std::string ToyBackend::weights_fingerprint() const {
  std::ostringstream os;
  os << "toy:seed=0x" << std::hex << options_.weights_seed;
  return os.str();
}

std::shared_ptr<Backend> make_toy_self_backend() {
  ToyOptions opt;
  opt.id = "toy-self";
  opt.kind = AttentionKind::self_attn;
  return std::make_shared<ToyBackend>(opt);
}

std::shared_ptr<Backend> make_toy_cross_backend() {
  ToyOptions opt;
  opt.id = "toy-cross";
  opt.kind = AttentionKind::cross_attn;
  opt.ip_tokens = 4;
  return std::make_shared<ToyBackend>(opt);
}

}  // namespace diffsim
