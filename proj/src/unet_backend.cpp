// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/unet_backend.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "diffsim/aas.hpp"
#include "diffsim/sha256.hpp"
#include "json.hpp"

namespace diffsim {

using nn::Conv2d;
using nn::FeatureMap;
using nn::GroupNorm;
using nn::LayerNorm;
using nn::Linear;
using nn::VectorXf;
using nn::fetch;
using nn::fetch_conv;
using nn::fetch_group_norm;
using nn::fetch_layer_norm;
using nn::fetch_linear;
using nn::fetch_vector;

namespace {

constexpr float kResNormEps = 1e-5f;
constexpr float kAttnNormEps = 1e-6f;
constexpr float kVaeNormEps = 1e-6f;

MatrixXf tokens_of(const FeatureMap& x) { return x.data.transpose(); }

FeatureMap map_of(const MatrixXf& tokens, int channels, int height,
                  int width) {
  FeatureMap out;
  out.data = tokens.transpose();
  out.channels = channels;
  out.height = height;
  out.width = width;
  return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError("channel concat: spatial mismatch");
  FeatureMap out;
  out.channels = a.channels + b.channels;
  out.height = a.height;
  out.width = a.width;
  out.data.resize(out.channels, a.data.cols());
  out.data.topRows(a.channels) = a.data;
  out.data.bottomRows(b.channels) = b.data;
  return out;
}

FeatureMap upsample_nearest2x(const FeatureMap& x) {
  FeatureMap out;
  out.channels = x.channels;
  out.height = x.height * 2;
  out.width = x.width * 2;
  out.data.resize(x.channels, static_cast<Eigen::Index>(out.height) * out.width);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx) {
      const Eigen::Index src = static_cast<Eigen::Index>(y) * x.width + xx;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          out.data.col(static_cast<Eigen::Index>(2 * y + dy) * out.width +
                       (2 * xx + dx)) = x.data.col(src);
    }
  return out;
}

// SD VAE downsampling pads only right/bottom before a stride-2 conv.
FeatureMap pad_right_bottom(const FeatureMap& x) {
  FeatureMap out;
  out.channels = x.channels;
  out.height = x.height + 1;
  out.width = x.width + 1;
  out.data = MatrixXf::Zero(x.channels,
                            static_cast<Eigen::Index>(out.height) * out.width);
  for (int y = 0; y < x.height; ++y)
    out.data.middleCols(static_cast<Eigen::Index>(y) * out.width, x.width) =
        x.data.middleCols(static_cast<Eigen::Index>(y) * x.width, x.width);
  return out;
}

// [cos | sin] halves, matching the converted checkpoints' embedding order.
VectorXf timestep_embedding(double t, int dim) {
  const int half = dim / 2;
  VectorXf emb(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    emb[i] = static_cast<float>(std::cos(t * freq));
    emb[half + i] = static_cast<float>(std::sin(t * freq));
  }
  return emb;
}

struct ResBlockW {
  GroupNorm norm1;
  Conv2d conv1;
  Linear temb;
  GroupNorm norm2;
  Conv2d conv2;
  std::optional<Conv2d> skip;
  bool has_temb = true;
};

struct CrossAttnW {
  Linear to_q, to_k, to_v, to_out;
  std::optional<Linear> to_k_ip, to_v_ip;
};

struct TransformerBlockW {
  LayerNorm ln1, ln2, ln3;
  CrossAttnW attn1, attn2;
  Linear ff1, ff2;  // GEGLU projection + output
};

struct SpatialTransformerW {
  GroupNorm norm;
  Linear proj_in, proj_out;  // 1x1 convs are stored in linear layout
  std::vector<TransformerBlockW> blocks;
  int heads = 8;
};

struct DownLevelW {
  std::vector<ResBlockW> res;
  std::vector<SpatialTransformerW> attn;  // empty when the level has none
  std::optional<Conv2d> downsample;
};

struct UpLevelW {
  std::vector<ResBlockW> res;
  std::vector<SpatialTransformerW> attn;
  std::optional<Conv2d> upsample;
};

struct VaeAttnW {
  GroupNorm norm;
  Linear to_q, to_k, to_v, to_out;
};

// Where a site lives in the traversal.
struct SiteAddress {
  int path = 0;  // 0 down, 1 mid, 2 up
  int level = 0;
  int ti = 0;  // transformer index inside the block
  int di = 0;  // depth index inside the transformer
};

struct CaptureSpec {
  SiteAddress addr;
  AttentionKind kind = AttentionKind::self_attn;
  nn::AttentionCapture cap;
  bool done = false;
};

int parse_block_index(const std::string& block, const std::string& prefix) {
  return std::stoi(block.substr(prefix.size()));
}

std::vector<int> attention_up_levels(const UNetTopology& topo) {
  std::vector<int> levels;
  for (int L = static_cast<int>(topo.channel_mult.size()) - 1; L >= 0; --L)
    if (topo.transformer_depth[static_cast<std::size_t>(L)] > 0)
      levels.push_back(L);
  return levels;
}

SiteAddress resolve_site_address(const UNetTopology& topo,
                                 const AttentionSite& site) {
  SiteAddress a;
  const int ord = site.layer_ordinal;
  if (site.block == "mid") {
    a.path = 1;
    a.ti = 0;
    a.di = ord;
    if (ord < 0 || ord >= topo.mid_depth)
      throw ConfigError("mid ordinal out of range: " + site.canonical());
    return a;
  }
  if (site.block.rfind("down_", 0) == 0) {
    a.path = 0;
    a.level = parse_block_index(site.block, "down_");
    if (a.level < 0 ||
        a.level >= static_cast<int>(topo.transformer_depth.size()) ||
        topo.transformer_depth[static_cast<std::size_t>(a.level)] == 0)
      throw ConfigError("no attention at block " + site.block);
    const int depth = topo.transformer_depth[static_cast<std::size_t>(a.level)];
    a.ti = ord / depth;
    a.di = ord % depth;
    if (ord < 0 || a.ti >= topo.num_res_blocks)
      throw ConfigError("down ordinal out of range: " + site.canonical());
    return a;
  }
  if (site.block.rfind("up_", 0) == 0) {
    a.path = 2;
    const int k = parse_block_index(site.block, "up_");
    const auto levels = attention_up_levels(topo);
    if (k < 0 || k >= static_cast<int>(levels.size()))
      throw ConfigError("no attention at block " + site.block);
    a.level = levels[static_cast<std::size_t>(k)];
    const int depth = topo.transformer_depth[static_cast<std::size_t>(a.level)];
    a.ti = ord / depth;
    a.di = ord % depth;
    if (ord < 0 || a.ti >= topo.num_res_blocks + 1)
      throw ConfigError("up ordinal out of range: " + site.canonical());
    return a;
  }
  throw ConfigError("unknown U-Net block '" + site.block + "'");
}

}  // namespace

UNetTopology UNetTopology::sd15() { return UNetTopology{}; }

UNetTopology UNetTopology::sdxl() {
  UNetTopology t;
  t.model_channels = 320;
  t.channel_mult = {1, 2, 4};
  t.num_res_blocks = 2;
  t.transformer_depth = {0, 2, 10};
  t.mid_depth = 10;
  t.num_heads = 0;
  t.head_channels = 64;
  t.context_dim = 2048;
  t.vae_scale = 0.13025;
  t.default_resolution = 1024;
  return t;
}

UNetTopology UNetTopology::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    throw ValidationError("unparseable backend config " + path.string() +
                          ": " + e.what());
  }
  UNetTopology t;
  t.model_channels = j.at("model_channels").get<int>();
  t.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  t.num_res_blocks = j.at("num_res_blocks").get<int>();
  t.transformer_depth = j.at("transformer_depth").get<std::vector<int>>();
  t.mid_depth = j.at("mid_depth").get<int>();
  t.num_heads = j.value("num_heads", 8);
  t.head_channels = j.value("head_channels", 0);
  t.context_dim = j.at("context_dim").get<int>();
  t.latent_channels = j.value("latent_channels", 4);
  t.vae_channels = j.value("vae_channels", 128);
  t.vae_mult = j.value("vae_mult", std::vector<int>{1, 2, 4, 4});
  t.vae_res_blocks = j.value("vae_res_blocks", 2);
  t.vae_scale = j.value("vae_scale", 0.18215);
  t.vae_downscale = j.value("vae_downscale", 8);
  t.default_resolution = j.value("default_resolution", 512);
  t.default_timestep = j.value("default_timestep", 500);
  t.total_steps = j.value("total_steps", 1000);
  t.beta_start = j.value("beta_start", 0.00085);
  t.beta_end = j.value("beta_end", 0.012);
  t.ip_tokens = j.value("ip_tokens", 16);
  t.ip_resampler_dim = j.value("ip_resampler_dim", 768);
  t.ip_resampler_depth = j.value("ip_resampler_depth", 4);
  t.ip_resampler_heads = j.value("ip_resampler_heads", 12);
  t.ip_image_layer_offset = j.value("ip_image_layer_offset", 2);
  if (t.transformer_depth.size() != t.channel_mult.size())
    throw ValidationError("transformer_depth and channel_mult length differ");
  return t;
}

std::vector<AttentionSite> unet_sites(const std::string& backend_id,
                                      const UNetTopology& topo) {
  std::vector<AttentionSite> sites;
  auto add = [&](const std::string& block, int ordinal) {
    for (AttentionKind kind :
         {AttentionKind::self_attn, AttentionKind::cross_attn}) {
      AttentionSite s;
      s.backend_id = backend_id;
      s.kind = kind;
      s.block = block;
      s.layer_ordinal = ordinal;
      s.timestep = topo.default_timestep;
      s.resolution = topo.default_resolution;
      sites.push_back(std::move(s));
    }
  };
  for (std::size_t L = 0; L < topo.channel_mult.size(); ++L) {
    const int depth = topo.transformer_depth[L];
    if (depth == 0) continue;
    for (int ti = 0; ti < topo.num_res_blocks; ++ti)
      for (int di = 0; di < depth; ++di)
        add("down_" + std::to_string(L), ti * depth + di);
  }
  for (int di = 0; di < topo.mid_depth; ++di) add("mid", di);
  const auto up_levels = attention_up_levels(topo);
  for (std::size_t k = 0; k < up_levels.size(); ++k) {
    const int depth =
        topo.transformer_depth[static_cast<std::size_t>(up_levels[k])];
    for (int ti = 0; ti < topo.num_res_blocks + 1; ++ti)
      for (int di = 0; di < depth; ++di)
        add("up_" + std::to_string(k), ti * depth + di);
  }
  std::sort(sites.begin(), sites.end(), site_order_less);
  return sites;
}

// ---------------------------------------------------------------------------

class UNetCore {
 public:
  UNetCore(UNetTopology topo, const std::filesystem::path& dir);

  const UNetTopology& topo() const { return topo_; }
  bool has_ip() const { return !resampler_layers_.empty(); }
  std::string fingerprint() const { return fingerprint_; }

  FeatureMap vae_encode(const Image& img, int resolution) const;
  MatrixXf ip_tokens_for(const Image& img) const;
  nn::AttentionCapture run_capture(const FeatureMap& noisy_latent,
                                   double timestep_index,
                                   const AttentionSite& site,
                                   const MatrixXf* ip_tokens) const;

 private:
  int heads_for(Eigen::Index inner_dim) const {
    return topo_.head_channels > 0
               ? static_cast<int>(inner_dim) / topo_.head_channels
               : topo_.num_heads;
  }

  SpatialTransformerW load_transformer(const TensorMap& tm,
                                       const TensorMap* ip_tm,
                                       const std::string& prefix, int depth,
                                       int* cross_counter);
  FeatureMap resblock(const ResBlockW& r, const FeatureMap& x,
                      const MatrixXf& temb_silu) const;
  FeatureMap transformer(const SpatialTransformerW& st, const FeatureMap& x,
                         const MatrixXf& ctx, const MatrixXf* ip,
                         CaptureSpec* spec, int path, int level,
                         int ti) const;

  UNetTopology topo_;
  std::string fingerprint_;

  // unet
  Linear time_fc1_, time_fc2_;
  std::optional<VectorXf> aug_emb_;
  Conv2d conv_in_;
  std::vector<DownLevelW> down_;
  ResBlockW mid_res0_, mid_res1_;
  SpatialTransformerW mid_attn_;
  std::vector<UpLevelW> up_;
  MatrixXf uncond_context_;

  // vae encoder
  Conv2d vae_conv_in_;
  std::vector<std::vector<ResBlockW>> vae_down_res_;
  std::vector<std::optional<Conv2d>> vae_downsample_;
  ResBlockW vae_mid_res0_, vae_mid_res1_;
  VaeAttnW vae_mid_attn_;
  GroupNorm vae_norm_out_;
  Conv2d vae_conv_out_;
  Linear vae_quant_;

  // IP-Adapter resampler (+ its image encoder), present when converted
  struct ResamplerLayer {
    LayerNorm ln_x, ln_lat;
    Linear to_q, to_kv, to_out;
    LayerNorm ffn_ln;
    Linear ffn_fc1, ffn_fc2;
  };
  MatrixXf resampler_latents_;
  Linear resampler_proj_in_, resampler_proj_out_;
  LayerNorm resampler_norm_out_;
  std::vector<ResamplerLayer> resampler_layers_;
  std::shared_ptr<VitCore> ip_image_encoder_;
};

namespace {

ResBlockW load_resblock(const TensorMap& tm, const std::string& p,
                        bool has_temb, float eps) {
  ResBlockW r;
  r.norm1 = fetch_group_norm(tm, p + ".norm1", 32);
  r.norm1.eps = eps;
  r.conv1 = fetch_conv(tm, p + ".conv1", 3, 1, 1);
  if (has_temb) r.temb = fetch_linear(tm, p + ".temb");
  r.has_temb = has_temb;
  r.norm2 = fetch_group_norm(tm, p + ".norm2", 32);
  r.norm2.eps = eps;
  r.conv2 = fetch_conv(tm, p + ".conv2", 3, 1, 1);
  if (tm.count(p + ".skip.weight")) r.skip = fetch_conv(tm, p + ".skip", 1, 1, 0);
  return r;
}

Linear fetch_linear_nobias(const TensorMap& tm, const std::string& prefix) {
  return fetch_linear(tm, prefix, false);
}

}  // namespace

SpatialTransformerW UNetCore::load_transformer(const TensorMap& tm,
                                               const TensorMap* ip_tm,
                                               const std::string& prefix,
                                               int depth, int* cross_counter) {
  SpatialTransformerW st;
  st.norm = fetch_group_norm(tm, prefix + ".norm", 32);
  st.norm.eps = kAttnNormEps;
  st.proj_in = fetch_linear(tm, prefix + ".proj_in");
  st.proj_out = fetch_linear(tm, prefix + ".proj_out");
  for (int d = 0; d < depth; ++d) {
    const std::string p = prefix + ".tb." + std::to_string(d) + ".";
    TransformerBlockW tb;
    tb.ln1 = fetch_layer_norm(tm, p + "ln1");
    tb.attn1.to_q = fetch_linear_nobias(tm, p + "attn1.to_q");
    tb.attn1.to_k = fetch_linear_nobias(tm, p + "attn1.to_k");
    tb.attn1.to_v = fetch_linear_nobias(tm, p + "attn1.to_v");
    tb.attn1.to_out = fetch_linear(tm, p + "attn1.to_out");
    tb.ln2 = fetch_layer_norm(tm, p + "ln2");
    tb.attn2.to_q = fetch_linear_nobias(tm, p + "attn2.to_q");
    tb.attn2.to_k = fetch_linear_nobias(tm, p + "attn2.to_k");
    tb.attn2.to_v = fetch_linear_nobias(tm, p + "attn2.to_v");
    tb.attn2.to_out = fetch_linear(tm, p + "attn2.to_out");
    if (ip_tm) {
      const std::string ipp = "cross." + std::to_string(*cross_counter) + ".";
      if (ip_tm->count(ipp + "to_k_ip.weight")) {
        tb.attn2.to_k_ip = fetch_linear_nobias(*ip_tm, ipp + "to_k_ip");
        tb.attn2.to_v_ip = fetch_linear_nobias(*ip_tm, ipp + "to_v_ip");
      }
    }
    ++*cross_counter;
    tb.ln3 = fetch_layer_norm(tm, p + "ln3");
    tb.ff1 = fetch_linear(tm, p + "ff.fc1");
    tb.ff2 = fetch_linear(tm, p + "ff.fc2");
    st.blocks.push_back(std::move(tb));
  }
  st.heads = heads_for(st.blocks.empty() ? topo_.model_channels
                                         : st.blocks[0].attn1.to_q.w.cols());
  return st;
}

UNetCore::UNetCore(UNetTopology topo, const std::filesystem::path& dir)
    : topo_(std::move(topo)) {
  const auto unet_file = dir / "unet.safetensors";
  const auto vae_file = dir / "vae_encoder.safetensors";
  const auto cond_file = dir / "cond.safetensors";
  for (const auto& f : {unet_file, vae_file, cond_file})
    if (!std::filesystem::exists(f))
      throw WeightsError("weights package incomplete", f.string());

  TensorMap tm = load_safetensors(unet_file);
  TensorMap vae = load_safetensors(vae_file);
  TensorMap cond = load_safetensors(cond_file);

  std::ostringstream fp;
  fp << "sha256:" << sha256_file_hex(unet_file).substr(0, 16);

  std::optional<TensorMap> ip_tm;
  const auto ip_file = dir / "ip_adapter.safetensors";
  const auto ip_enc_dir = dir / "ip_image_encoder";
  if (std::filesystem::exists(ip_file) &&
      std::filesystem::exists(ip_enc_dir / "model.safetensors")) {
    ip_tm = load_safetensors(ip_file);
    fp << "+ip:" << sha256_file_hex(ip_file).substr(0, 8);
  }
  fingerprint_ = fp.str();

  time_fc1_ = fetch_linear(tm, "time_embed.fc1");
  time_fc2_ = fetch_linear(tm, "time_embed.fc2");
  conv_in_ = fetch_conv(tm, "conv_in", 3, 1, 1);
  uncond_context_ = matrix_from_tensor(fetch(cond, "context"));
  if (cond.count("aug_emb")) aug_emb_ = fetch_vector(cond, "aug_emb");

  const TensorMap* ip_ptr = ip_tm ? &*ip_tm : nullptr;
  int cross_counter = 0;
  const int levels = static_cast<int>(topo_.channel_mult.size());
  for (int L = 0; L < levels; ++L) {
    DownLevelW lvl;
    const int depth = topo_.transformer_depth[static_cast<std::size_t>(L)];
    for (int j = 0; j < topo_.num_res_blocks; ++j) {
      const std::string p =
          "down." + std::to_string(L) + ".res." + std::to_string(j);
      lvl.res.push_back(load_resblock(tm, p, true, kResNormEps));
      if (depth > 0) {
        const std::string ap =
            "down." + std::to_string(L) + ".attn." + std::to_string(j);
        lvl.attn.push_back(
            load_transformer(tm, ip_ptr, ap, depth, &cross_counter));
      }
    }
    if (L < levels - 1)
      lvl.downsample =
          fetch_conv(tm, "down." + std::to_string(L) + ".downsample", 3, 2, 1);
    down_.push_back(std::move(lvl));
  }

  mid_res0_ = load_resblock(tm, "mid.res.0", true, kResNormEps);
  mid_attn_ = load_transformer(tm, ip_ptr, "mid.attn.0", topo_.mid_depth,
                               &cross_counter);
  mid_res1_ = load_resblock(tm, "mid.res.1", true, kResNormEps);

  for (int L = levels - 1; L >= 0; --L) {
    UpLevelW lvl;
    const int depth = topo_.transformer_depth[static_cast<std::size_t>(L)];
    for (int j = 0; j < topo_.num_res_blocks + 1; ++j) {
      const std::string p =
          "up." + std::to_string(L) + ".res." + std::to_string(j);
      lvl.res.push_back(load_resblock(tm, p, true, kResNormEps));
      if (depth > 0) {
        const std::string ap =
            "up." + std::to_string(L) + ".attn." + std::to_string(j);
        lvl.attn.push_back(
            load_transformer(tm, ip_ptr, ap, depth, &cross_counter));
      }
    }
    if (L > 0)
      lvl.upsample =
          fetch_conv(tm, "up." + std::to_string(L) + ".upsample", 3, 1, 1);
    up_.push_back(std::move(lvl));
  }

  // VAE encoder
  vae_conv_in_ = fetch_conv(vae, "vae.conv_in", 3, 1, 1);
  const int vae_levels = static_cast<int>(topo_.vae_mult.size());
  for (int L = 0; L < vae_levels; ++L) {
    std::vector<ResBlockW> res;
    for (int j = 0; j < topo_.vae_res_blocks; ++j)
      res.push_back(load_resblock(
          vae, "vae.down." + std::to_string(L) + ".res." + std::to_string(j),
          false, kVaeNormEps));
    vae_down_res_.push_back(std::move(res));
    if (L < vae_levels - 1)
      vae_downsample_.push_back(fetch_conv(
          vae, "vae.down." + std::to_string(L) + ".downsample", 3, 2, 0));
    else
      vae_downsample_.push_back(std::nullopt);
  }
  vae_mid_res0_ = load_resblock(vae, "vae.mid.res.0", false, kVaeNormEps);
  vae_mid_res1_ = load_resblock(vae, "vae.mid.res.1", false, kVaeNormEps);
  vae_mid_attn_.norm = fetch_group_norm(vae, "vae.mid.attn.norm", 32);
  vae_mid_attn_.norm.eps = kVaeNormEps;
  vae_mid_attn_.to_q = fetch_linear(vae, "vae.mid.attn.to_q");
  vae_mid_attn_.to_k = fetch_linear(vae, "vae.mid.attn.to_k");
  vae_mid_attn_.to_v = fetch_linear(vae, "vae.mid.attn.to_v");
  vae_mid_attn_.to_out = fetch_linear(vae, "vae.mid.attn.to_out");
  vae_norm_out_ = fetch_group_norm(vae, "vae.norm_out", 32);
  vae_norm_out_.eps = kVaeNormEps;
  vae_conv_out_ = fetch_conv(vae, "vae.conv_out", 3, 1, 1);
  vae_quant_ = fetch_linear(vae, "vae.quant_conv");

  // IP resampler
  if (ip_tm) {
    resampler_latents_ =
        matrix_from_tensor(fetch(*ip_tm, "ip.resampler.latents"));
    resampler_proj_in_ = fetch_linear(*ip_tm, "ip.resampler.proj_in");
    resampler_proj_out_ = fetch_linear(*ip_tm, "ip.resampler.proj_out");
    resampler_norm_out_ = fetch_layer_norm(*ip_tm, "ip.resampler.norm_out");
    for (int i = 0; i < topo_.ip_resampler_depth; ++i) {
      const std::string p = "ip.resampler.layers." + std::to_string(i) + ".";
      ResamplerLayer layer;
      layer.ln_x = fetch_layer_norm(*ip_tm, p + "ln_x");
      layer.ln_lat = fetch_layer_norm(*ip_tm, p + "ln_lat");
      layer.to_q = fetch_linear_nobias(*ip_tm, p + "to_q");
      layer.to_kv = fetch_linear_nobias(*ip_tm, p + "to_kv");
      layer.to_out = fetch_linear_nobias(*ip_tm, p + "to_out");
      layer.ffn_ln = fetch_layer_norm(*ip_tm, p + "ffn.ln");
      layer.ffn_fc1 = fetch_linear_nobias(*ip_tm, p + "ffn.fc1");
      layer.ffn_fc2 = fetch_linear_nobias(*ip_tm, p + "ffn.fc2");
      resampler_layers_.push_back(std::move(layer));
    }
    const auto enc_cfg = ip_enc_dir / "config.json";
    VitConfig cfg = std::filesystem::exists(enc_cfg)
                        ? VitConfig::from_json_file(enc_cfg)
                        : VitConfig::clip_vit_l14();
    ip_image_encoder_ = std::make_shared<VitCore>(
        cfg, ip_enc_dir / "model.safetensors");
  }
}

FeatureMap UNetCore::resblock(const ResBlockW& r, const FeatureMap& x,
                              const MatrixXf& temb_silu) const {
  FeatureMap h = r.norm1.apply(x);
  h.data = nn::silu(h.data);
  h = r.conv1.apply(h);
  if (r.has_temb) {
    const MatrixXf emb = r.temb.apply(temb_silu);  // 1 x out_ch
    for (int c = 0; c < h.channels; ++c) h.data.row(c).array() += emb(0, c);
  }
  FeatureMap h2 = r.norm2.apply(h);
  h2.data = nn::silu(h2.data);
  h2 = r.conv2.apply(h2);
  const FeatureMap xs = r.skip ? r.skip->apply(x) : x;
  h2.data += xs.data;
  return h2;
}

FeatureMap UNetCore::transformer(const SpatialTransformerW& st,
                                 const FeatureMap& x, const MatrixXf& ctx,
                                 const MatrixXf* ip, CaptureSpec* spec,
                                 int path, int level, int ti) const {
  const FeatureMap normed = st.norm.apply(x);
  MatrixXf tokens = st.proj_in.apply(tokens_of(normed));
  const int heads = st.heads;

  for (std::size_t d = 0; d < st.blocks.size(); ++d) {
    const TransformerBlockW& tb = st.blocks[d];
    const bool here = spec && !spec->done && spec->addr.path == path &&
                      spec->addr.level == level && spec->addr.ti == ti &&
                      spec->addr.di == static_cast<int>(d);

    // self-attention
    {
      const MatrixXf h = tb.ln1.apply(tokens);
      if (here && spec->kind == AttentionKind::self_attn) {
        nn::multihead_attention(h, h, tb.attn1.to_q, tb.attn1.to_k,
                                tb.attn1.to_v, tb.attn1.to_out, heads,
                                &spec->cap);
        spec->done = true;
        return x;
      }
      tokens += nn::multihead_attention(h, h, tb.attn1.to_q, tb.attn1.to_k,
                                        tb.attn1.to_v, tb.attn1.to_out, heads);
    }

    // cross-attention (text context, plus IP tokens when routed)
    {
      const MatrixXf h = tb.ln2.apply(tokens);
      if (here && spec->kind == AttentionKind::cross_attn) {
        if (!ip || !tb.attn2.to_k_ip)
          throw ConfigError(
              "cross-attention capture needs IP-Adapter weights and tokens");
        const MatrixXf q = tb.attn2.to_q.apply(h);
        const MatrixXf k = tb.attn2.to_k_ip->apply(*ip);
        const MatrixXf v = tb.attn2.to_v_ip->apply(*ip);
        const Eigen::Index dh = q.cols() / heads;
        for (int hh = 0; hh < heads; ++hh) {
          spec->cap.q.push_back(q.middleCols(dh * hh, dh));
          spec->cap.k.push_back(k.middleCols(dh * hh, dh));
          spec->cap.v.push_back(v.middleCols(dh * hh, dh));
        }
        spec->done = true;
        return x;
      }
      const MatrixXf q = tb.attn2.to_q.apply(h);
      const MatrixXf k = tb.attn2.to_k.apply(ctx);
      const MatrixXf v = tb.attn2.to_v.apply(ctx);
      const Eigen::Index dh = q.cols() / heads;
      MatrixXf concat(tokens.rows(), q.cols());
      for (int hh = 0; hh < heads; ++hh)
        concat.middleCols(dh * hh, dh) = scaled_dot_attention<float>(
            q.middleCols(dh * hh, dh), k.middleCols(dh * hh, dh),
            v.middleCols(dh * hh, dh));
      if (ip && tb.attn2.to_k_ip) {
        const MatrixXf k_ip = tb.attn2.to_k_ip->apply(*ip);
        const MatrixXf v_ip = tb.attn2.to_v_ip->apply(*ip);
        for (int hh = 0; hh < heads; ++hh)
          concat.middleCols(dh * hh, dh) += scaled_dot_attention<float>(
              q.middleCols(dh * hh, dh), k_ip.middleCols(dh * hh, dh),
              v_ip.middleCols(dh * hh, dh));
      }
      tokens += tb.attn2.to_out.apply(concat);
    }

    // GEGLU feed-forward
    {
      const MatrixXf h = tb.ln3.apply(tokens);
      const MatrixXf proj = tb.ff1.apply(h);
      const Eigen::Index inner = proj.cols() / 2;
      const MatrixXf gated = (proj.leftCols(inner).array() *
                              nn::gelu(proj.rightCols(inner)).array())
                                 .matrix();
      tokens += tb.ff2.apply(gated);
    }
  }

  MatrixXf out = st.proj_out.apply(tokens);
  FeatureMap result = map_of(out, x.channels, x.height, x.width);
  result.data += x.data;
  return result;
}

FeatureMap UNetCore::vae_encode(const Image& img, int resolution) const {
  const Image pre = standard_preprocess(img, resolution);
  FeatureMap x;
  x.channels = 3;
  x.height = resolution;
  x.width = resolution;
  x.data.resize(3, static_cast<Eigen::Index>(resolution) * resolution);
  for (int y = 0; y < resolution; ++y)
    for (int xx = 0; xx < resolution; ++xx)
      for (int c = 0; c < 3; ++c)
        x.data(c, static_cast<Eigen::Index>(y) * resolution + xx) =
            static_cast<float>(pre.at(xx, y, c)) / 127.5f - 1.0f;

  const MatrixXf no_temb;
  x = vae_conv_in_.apply(x);
  for (std::size_t L = 0; L < vae_down_res_.size(); ++L) {
    for (const auto& r : vae_down_res_[L]) x = resblock(r, x, no_temb);
    if (vae_downsample_[L]) {
      x = pad_right_bottom(x);
      x = vae_downsample_[L]->apply(x);
    }
  }
  x = resblock(vae_mid_res0_, x, no_temb);
  {
    const FeatureMap normed = vae_mid_attn_.norm.apply(x);
    const MatrixXf tokens = tokens_of(normed);
    const MatrixXf out = nn::multihead_attention(
        tokens, tokens, vae_mid_attn_.to_q, vae_mid_attn_.to_k,
        vae_mid_attn_.to_v, vae_mid_attn_.to_out, 1);
    x.data += out.transpose();
  }
  x = resblock(vae_mid_res1_, x, no_temb);

  FeatureMap h = vae_norm_out_.apply(x);
  h.data = nn::silu(h.data);
  h = vae_conv_out_.apply(h);
  const MatrixXf moments = vae_quant_.apply(tokens_of(h));

  FeatureMap latent;
  latent.channels = topo_.latent_channels;
  latent.height = h.height;
  latent.width = h.width;
  latent.data =
      moments.leftCols(topo_.latent_channels).transpose() *
      static_cast<float>(topo_.vae_scale);
  return latent;
}

MatrixXf UNetCore::ip_tokens_for(const Image& img) const {
  if (!has_ip())
    throw WeightsError("IP-Adapter weights not converted for this backend",
                       "ip_adapter.safetensors");
  const VitConfig& cfg = ip_image_encoder_->config();
  MatrixXf tokens = ip_image_encoder_->embed(img, cfg.default_resolution);
  tokens = ip_image_encoder_->run_blocks(
      std::move(tokens), cfg.depth - (topo_.ip_image_layer_offset - 1));

  MatrixXf x = resampler_proj_in_.apply(tokens);
  MatrixXf lat = resampler_latents_;
  const int heads = topo_.ip_resampler_heads;
  for (const auto& layer : resampler_layers_) {
    const MatrixXf xn = layer.ln_x.apply(x);
    const MatrixXf ln = layer.ln_lat.apply(lat);
    MatrixXf kv_in(xn.rows() + ln.rows(), xn.cols());
    kv_in.topRows(xn.rows()) = xn;
    kv_in.bottomRows(ln.rows()) = ln;
    const MatrixXf q = layer.to_q.apply(ln);
    const MatrixXf kv = layer.to_kv.apply(kv_in);
    const Eigen::Index dim = q.cols();
    const MatrixXf k = kv.leftCols(dim);
    const MatrixXf v = kv.rightCols(dim);
    const Eigen::Index dh = dim / heads;
    MatrixXf concat(lat.rows(), dim);
    for (int hh = 0; hh < heads; ++hh)
      concat.middleCols(dh * hh, dh) = scaled_dot_attention<float>(
          q.middleCols(dh * hh, dh), k.middleCols(dh * hh, dh),
          v.middleCols(dh * hh, dh));
    lat += layer.to_out.apply(concat);
    lat += layer.ffn_fc2.apply(nn::gelu(layer.ffn_fc1.apply(layer.ffn_ln.apply(lat))));
  }
  return resampler_norm_out_.apply(resampler_proj_out_.apply(lat));
}

nn::AttentionCapture UNetCore::run_capture(const FeatureMap& noisy_latent,
                                           double timestep_index,
                                           const AttentionSite& site,
                                           const MatrixXf* ip_tokens) const {
  CaptureSpec spec;
  spec.addr = resolve_site_address(topo_, site);
  spec.kind = site.kind;

  VectorXf temb_in = timestep_embedding(timestep_index, topo_.model_channels);
  MatrixXf temb =
      time_fc2_.apply(nn::silu(time_fc1_.apply(temb_in.transpose())));
  if (aug_emb_) temb.row(0) += aug_emb_->transpose();
  const MatrixXf temb_silu = nn::silu(temb);

  const MatrixXf& ctx = uncond_context_;
  FeatureMap x = conv_in_.apply(noisy_latent);
  std::vector<FeatureMap> skips;
  skips.push_back(x);

  const int levels = static_cast<int>(topo_.channel_mult.size());
  for (int L = 0; L < levels; ++L) {
    const DownLevelW& lvl = down_[static_cast<std::size_t>(L)];
    for (int j = 0; j < topo_.num_res_blocks; ++j) {
      x = resblock(lvl.res[static_cast<std::size_t>(j)], x, temb_silu);
      if (!lvl.attn.empty()) {
        x = transformer(lvl.attn[static_cast<std::size_t>(j)], x, ctx,
                        ip_tokens, &spec, 0, L, j);
        if (spec.done) return std::move(spec.cap);
      }
      skips.push_back(x);
    }
    if (lvl.downsample) {
      x = lvl.downsample->apply(x);
      skips.push_back(x);
    }
  }

  x = resblock(mid_res0_, x, temb_silu);
  x = transformer(mid_attn_, x, ctx, ip_tokens, &spec, 1, 0, 0);
  if (spec.done) return std::move(spec.cap);
  x = resblock(mid_res1_, x, temb_silu);

  for (int L = levels - 1; L >= 0; --L) {
    const UpLevelW& lvl = up_[static_cast<std::size_t>(levels - 1 - L)];
    for (int j = 0; j < topo_.num_res_blocks + 1; ++j) {
      const FeatureMap skip = std::move(skips.back());
      skips.pop_back();
      x = resblock(lvl.res[static_cast<std::size_t>(j)],
                   concat_channels(x, skip), temb_silu);
      if (!lvl.attn.empty()) {
        x = transformer(lvl.attn[static_cast<std::size_t>(j)], x, ctx,
                        ip_tokens, &spec, 2, L, j);
        if (spec.done) return std::move(spec.cap);
      }
    }
    if (lvl.upsample) {
      x = upsample_nearest2x(x);
      x = lvl.upsample->apply(x);
    }
  }

  throw ConfigError("site never reached during traversal: " +
                    site.canonical());
}

// ---------------------------------------------------------------------------

UNetBackend::UNetBackend(std::string id, std::filesystem::path weights_dir)
    : id_(std::move(id)), dir_(std::move(weights_dir)) {}

UNetBackend::~UNetBackend() = default;

std::filesystem::path UNetBackend::weights_dir() const {
  return dir_.empty() ? weights_root() / id_ : dir_;
}

UNetTopology UNetBackend::current_topology() const {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (core_) return core_->topo();
  }
  const auto cfg = weights_dir() / "config.json";
  if (std::filesystem::exists(cfg)) return UNetTopology::from_json_file(cfg);
  return id_ == "sdxl" ? UNetTopology::sdxl() : UNetTopology::sd15();
}

const UNetCore& UNetBackend::core() const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (!core_) {
    const auto dir = weights_dir();
    if (!std::filesystem::exists(dir / "unet.safetensors"))
      throw WeightsError("weights for backend " + id_ + " not found",
                         (dir / "unet.safetensors").string());
    const auto cfg = dir / "config.json";
    UNetTopology topo = std::filesystem::exists(cfg)
                            ? UNetTopology::from_json_file(cfg)
                            : (id_ == "sdxl" ? UNetTopology::sdxl()
                                             : UNetTopology::sd15());
    core_ = std::make_shared<UNetCore>(topo, dir);
  }
  return *core_;
}

const NoiseSchedule* UNetBackend::schedule() const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (!schedule_) {
    UNetTopology topo;
    if (core_) {
      topo = core_->topo();
    } else {
      const auto cfg = weights_dir() / "config.json";
      topo = std::filesystem::exists(cfg)
                 ? UNetTopology::from_json_file(cfg)
                 : (id_ == "sdxl" ? UNetTopology::sdxl()
                                  : UNetTopology::sd15());
    }
    schedule_ = NoiseSchedule::scaled_linear(topo.total_steps, topo.beta_start,
                                             topo.beta_end);
  }
  return &*schedule_;
}

std::vector<AttentionSite> UNetBackend::list_sites() const {
  return unet_sites(id_, current_topology());
}

void UNetBackend::check_resolution(int resolution) const {
  const UNetTopology topo = current_topology();
  // The published sweep range; anything here maps to a whole latent grid.
  if (resolution < 256 || resolution > 1024 ||
      resolution % topo.vae_downscale != 0)
    throw ValidationError(
        "backend " + id_ + ": resolution " + std::to_string(resolution) +
        " must be a multiple of " + std::to_string(topo.vae_downscale) +
        " in [256, 1024]");
}

Latent UNetBackend::encode(const Image& img, int resolution) const {
  check_resolution(resolution);
  const FeatureMap fm = core().vae_encode(img, resolution);
  Latent latent;
  latent.data = fm.data;
  latent.channels = fm.channels;
  latent.height = fm.height;
  latent.width = fm.width;
  return latent;
}

int UNetBackend::ip_token_count() const {
  return current_topology().ip_tokens;
}

IPTokenSet UNetBackend::extract_ip_tokens(const Image& img,
                                          const std::string& source_id) const {
  IPTokenSet set;
  set.tokens = core().ip_tokens_for(img);
  set.source_id = source_id;
  return set;
}

ProjectedLatents UNetBackend::extract(const Image& img,
                                      const std::string& source_id,
                                      const AttentionSite& site,
                                      std::uint64_t noise_seed) const {
  check_site(site);
  const UNetCore& c = core();
  const int t = *site.timestep;

  FeatureMap z = c.vae_encode(img, site.resolution);
  Rng eps_rng(derive_stream(noise_seed, "eps@t" + std::to_string(t)));
  const MatrixXf eps =
      gaussian_matrix<float>(z.data.rows(), z.data.cols(), eps_rng);
  z.data = forward_noise(z.data, t, eps, *schedule());

  std::optional<MatrixXf> ip;
  if (site.kind == AttentionKind::cross_attn)
    ip = c.ip_tokens_for(img);

  // The network's clock: spec timestep t in [0, T] maps to checkpoint
  // index t-1 (t = 0 stays clean and reuses index 0).
  const double tau = t > 0 ? t - 1 : 0;
  nn::AttentionCapture cap =
      c.run_capture(z, tau, site, ip ? &*ip : nullptr);

  ProjectedLatents latents;
  latents.q = std::move(cap.q);
  latents.k = std::move(cap.k);
  latents.v = std::move(cap.v);
  latents.site = site;
  latents.source_id = source_id;
  latents.validate();
  return latents;
}

std::string UNetBackend::weights_fingerprint() const {
  std::lock_guard<std::mutex> lock(mutex_);
  if (core_) return core_->fingerprint();
  return std::filesystem::exists(weights_dir() / "unet.safetensors")
             ? "present:unloaded"
             : "absent";
}

std::shared_ptr<Backend> make_unet_backend(const std::string& id) {
  return std::make_shared<UNetBackend>(id);
}

}  // namespace diffsim
