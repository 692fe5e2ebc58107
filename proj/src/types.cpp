// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/types.hpp"

#include <array>
#include <charconv>
#include <sstream>

namespace diffsim {

const char* to_string(AttentionKind kind) {
  return kind == AttentionKind::self_attn ? "self" : "cross";
}

AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "self") return AttentionKind::self_attn;
  if (s == "cross") return AttentionKind::cross_attn;
  throw ValidationError("unknown attention kind: " + s);
}

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::diffsim_s: return "diffsim_s";
    case MetricKind::diffsim_c: return "diffsim_c";
    case MetricKind::clip_aas: return "clip_aas";
    case MetricKind::dino_aas: return "dino_aas";
    case MetricKind::toy_aas: return "toy_aas";
  }
  return "?";
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "diffsim_s") return MetricKind::diffsim_s;
  if (s == "diffsim_c") return MetricKind::diffsim_c;
  if (s == "clip_aas") return MetricKind::clip_aas;
  if (s == "dino_aas") return MetricKind::dino_aas;
  if (s == "toy_aas") return MetricKind::toy_aas;
  throw ValidationError("unknown metric kind: " + s);
}

const char* to_string(CosineMode mode) {
  return mode == CosineMode::per_token_mean ? "per_token_mean" : "flattened";
}

CosineMode cosine_mode_from_string(const std::string& s) {
  if (s == "per_token_mean") return CosineMode::per_token_mean;
  if (s == "flattened") return CosineMode::flattened;
  throw ValidationError("unknown cosine mode: " + s);
}

std::string AttentionSite::canonical() const {
  std::ostringstream os;
  os << backend_id << '/' << to_string(kind) << '/' << block << '/'
     << layer_ordinal;
  if (timestep) os << "@t" << *timestep;
  os << "/r" << resolution;
  return os.str();
}

AttentionSite AttentionSite::parse(const std::string& canonical) {
  AttentionSite site;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : canonical) {
    if (c == '/') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.size() != 5)
    throw ValidationError("malformed site string: " + canonical);
  site.backend_id = parts[0];
  site.kind = attention_kind_from_string(parts[1]);
  site.block = parts[2];
  std::string ord = parts[3];
  auto at = ord.find("@t");
  if (at != std::string::npos) {
    site.timestep = std::stoi(ord.substr(at + 2));
    ord = ord.substr(0, at);
  }
  site.layer_ordinal = std::stoi(ord);
  if (parts[4].empty() || parts[4][0] != 'r')
    throw ValidationError("malformed site string: " + canonical);
  site.resolution = std::stoi(parts[4].substr(1));
  return site;
}

bool AttentionSite::same_layer(const AttentionSite& other) const {
  return backend_id == other.backend_id && kind == other.kind &&
         block == other.block && layer_ordinal == other.layer_ordinal;
}

bool AttentionSite::operator==(const AttentionSite& other) const {
  return same_layer(other) && timestep == other.timestep &&
         resolution == other.resolution;
}

namespace {

// (class, index): named U-Net blocks first in pipeline order, then integer
// transformer layers, then anything else lexicographically.
std::pair<int, long> block_key(const std::string& block) {
  static const std::array<const char*, 7> named = {
      "down_0", "down_1", "down_2", "mid", "up_0", "up_1", "up_2"};
  for (std::size_t i = 0; i < named.size(); ++i)
    if (block == named[i]) return {0, static_cast<long>(i)};
  long value = 0;
  auto [ptr, ec] =
      std::from_chars(block.data(), block.data() + block.size(), value);
  if (ec == std::errc() && ptr == block.data() + block.size())
    return {1, value};
  return {2, 0};
}

}  // namespace

bool site_order_less(const AttentionSite& a, const AttentionSite& b) {
  if (a.kind != b.kind) return a.kind < b.kind;
  auto ka = block_key(a.block), kb = block_key(b.block);
  if (ka != kb) return ka < kb;
  if (ka.first == 2 && a.block != b.block) return a.block < b.block;
  return a.layer_ordinal < b.layer_ordinal;
}

std::string MetricConfig::canonical() const {
  std::ostringstream os;
  os << "metric=" << to_string(metric_kind) << ";site=" << site.canonical()
     << ";seed=" << noise_seed << ";shared=" << (shared_noise ? 1 : 0)
     << ";cos=" << to_string(cosine_mode) << ";crop=" << (crop_subject ? 1 : 0);
  return os.str();
}

void MetricConfig::validate() const {
  const bool wants_cross = metric_kind == MetricKind::diffsim_c;
  const bool is_cross = site.kind == AttentionKind::cross_attn;
  if (wants_cross != is_cross)
    throw ConfigError("metric kind " + std::string(to_string(metric_kind)) +
                      " is inconsistent with site kind " +
                      to_string(site.kind));
  if (site.timestep && (*site.timestep < 0))
    throw ConfigError("negative timestep in site " + site.canonical());
  if (site.resolution < 1)
    throw ConfigError("non-positive resolution in site " + site.canonical());
}

std::string CacheKey::canonical() const {
  std::ostringstream os;
  os << image_hash << '|' << backend_id << '|' << site << '|' << noise_seed
     << '|' << resolution;
  return os.str();
}

}  // namespace diffsim
