// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "diffsim/errors.hpp"
#include "json.hpp"

namespace diffsim {

using nlohmann::json;

const char* to_string(BenchmarkId id) {
  switch (id) {
    case BenchmarkId::nights: return "nights";
    case BenchmarkId::dreambench_pp: return "dreambench_pp";
    case BenchmarkId::cute: return "cute";
    case BenchmarkId::ip_bench: return "ip_bench";
    case BenchmarkId::tid2013: return "tid2013";
    case BenchmarkId::sref: return "sref";
    case BenchmarkId::instantstyle: return "instantstyle";
    case BenchmarkId::tiktok: return "tiktok";
  }
  return "?";
}

BenchmarkId benchmark_from_string(const std::string& s) {
  if (s == "nights") return BenchmarkId::nights;
  if (s == "dreambench_pp") return BenchmarkId::dreambench_pp;
  if (s == "cute") return BenchmarkId::cute;
  if (s == "ip_bench") return BenchmarkId::ip_bench;
  if (s == "tid2013") return BenchmarkId::tid2013;
  if (s == "sref") return BenchmarkId::sref;
  if (s == "instantstyle") return BenchmarkId::instantstyle;
  if (s == "tiktok") return BenchmarkId::tiktok;
  throw ManifestError("unknown benchmark '" + s + "'", "benchmark");
}

const ManifestItem& DatasetManifest::item(const std::string& id) const {
  for (const auto& it : items)
    if (it.id == id) return it;
  throw ManifestError("unknown item id '" + id + "'", "items");
}

std::filesystem::path DatasetManifest::resolve(const std::string& id) const {
  const std::filesystem::path p(item(id).path);
  return p.is_absolute() ? p : dir / p;
}

namespace {

std::string field_path(std::size_t index, const std::string& field) {
  return "items[" + std::to_string(index) + "]." + field;
}

std::string require_string(const json& j, std::size_t index,
                           const std::string& field) {
  if (!j.contains(field) || !j[field].is_string() ||
      j[field].get<std::string>().empty())
    throw ManifestError("missing or empty required field",
                        field_path(index, field));
  return j[field].get<std::string>();
}

void validate_per_benchmark(const DatasetManifest& m) {
  const auto require = [&](std::size_t i, bool ok, const std::string& field,
                           const std::string& why) {
    if (!ok) throw ManifestError(why, field_path(i, field));
  };

  switch (m.benchmark) {
    case BenchmarkId::nights: {
      if (m.triplets.empty())
        throw ManifestError("nights manifest needs a 'triplets' array",
                            "triplets");
      std::set<std::string> ids;
      for (const auto& it : m.items) ids.insert(it.id);
      for (std::size_t i = 0; i < m.triplets.size(); ++i) {
        const auto& t = m.triplets[i];
        const std::string at = "triplets[" + std::to_string(i) + "]";
        if (!ids.count(t.ref) || !ids.count(t.cand0) || !ids.count(t.cand1))
          throw ManifestError("triplet references unknown item id", at);
        if (t.gt_index != 0 && t.gt_index != 1)
          throw ManifestError("gt_index must be 0 or 1", at + ".gt_index");
        if (t.ref == t.cand0 || t.ref == t.cand1)
          throw ManifestError("reference may not appear as candidate", at);
        if (t.cand0 == t.cand1)
          throw ManifestError("candidates must differ", at);
      }
      break;
    }
    case BenchmarkId::sref:
    case BenchmarkId::instantstyle: {
      std::map<std::string, int> per_style;
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        require(i, !m.items[i].style_id.empty(), "style_id", "required");
        ++per_style[m.items[i].style_id];
      }
      if (m.benchmark == BenchmarkId::sref)
        for (const auto& [style, n] : per_style)
          if (n != 4)
            throw ManifestError("sref style '" + style + "' has " +
                                    std::to_string(n) +
                                    " images; exactly 4 required",
                                "items.style_id=" + style);
      if (m.benchmark == BenchmarkId::instantstyle)
        for (const auto& [style, n] : per_style)
          if (n < 2)
            throw ManifestError("instantstyle style '" + style +
                                    "' needs at least 2 images",
                                "items.style_id=" + style);
      break;
    }
    case BenchmarkId::cute:
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        require(i, !m.items[i].instance_id.empty(), "instance_id", "required");
        require(i, !m.items[i].lighting_id.empty(), "lighting_id", "required");
      }
      break;
    case BenchmarkId::ip_bench: {
      std::map<std::string, int> refs;
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        const auto& it = m.items[i];
        require(i, !it.character_id.empty(), "character_id", "required");
        require(i, it.role == "reference" || it.role == "variant", "role",
                "must be 'reference' or 'variant'");
        if (it.role == "variant")
          require(i, it.consistency_weight.has_value(), "consistency_weight",
                  "required on variants");
        else
          ++refs[it.character_id];
      }
      for (const auto& [ch, n] : refs)
        if (n != 1)
          throw ManifestError("character '" + ch + "' must have exactly one " +
                                  "reference image, has " + std::to_string(n),
                              "items.character_id=" + ch);
      break;
    }
    case BenchmarkId::tid2013: {
      std::set<std::string> ref_ids;
      for (const auto& it : m.items)
        if (it.role == "reference") ref_ids.insert(it.id);
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        const auto& it = m.items[i];
        require(i, it.role == "reference" || it.role == "distorted", "role",
                "must be 'reference' or 'distorted'");
        if (it.role == "distorted") {
          require(i, !it.distortion_type.empty(), "distortion_type",
                  "required");
          require(i,
                  it.distortion_level.has_value() &&
                      *it.distortion_level >= 1 && *it.distortion_level <= 5,
                  "distortion_level", "must be an integer in 1..5");
          require(i, ref_ids.count(it.reference_id) > 0, "reference_id",
                  "must name a reference item");
        }
      }
      break;
    }
    case BenchmarkId::dreambench_pp: {
      std::map<std::string, int> refs;
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        const auto& it = m.items[i];
        require(i, !it.group_id.empty(), "group_id", "required");
        require(i, it.role == "reference" || it.role == "generated", "role",
                "must be 'reference' or 'generated'");
        if (it.role == "generated")
          require(i, it.human_rating.has_value(), "human_rating",
                  "required on generated images");
        else
          ++refs[it.group_id];
      }
      for (const auto& [g, n] : refs)
        if (n != 1)
          throw ManifestError("group '" + g + "' must have exactly one " +
                                  "reference image, has " + std::to_string(n),
                              "items.group_id=" + g);
      break;
    }
    case BenchmarkId::tiktok: {
      std::set<std::pair<std::string, int>> seen;
      for (std::size_t i = 0; i < m.items.size(); ++i) {
        const auto& it = m.items[i];
        require(i, !it.video_id.empty(), "video_id", "required");
        require(i, it.frame_index.has_value() && *it.frame_index >= 0,
                "frame_index", "must be a non-negative integer");
        if (!seen.insert({it.video_id, *it.frame_index}).second)
          throw ManifestError("duplicate frame index " +
                                  std::to_string(*it.frame_index) +
                                  " in video '" + it.video_id + "'",
                              field_path(i, "frame_index"));
      }
      break;
    }
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const std::exception& e) {
    throw ManifestError(std::string("unparseable manifest JSON: ") + e.what(),
                        path.string());
  }

  DatasetManifest m;
  if (!j.contains("benchmark") || !j["benchmark"].is_string())
    throw ManifestError("missing 'benchmark' field", "benchmark");
  m.benchmark = benchmark_from_string(j["benchmark"].get<std::string>());
  m.dir = std::filesystem::absolute(path).parent_path();

  if (!j.contains("items") || !j["items"].is_array() || j["items"].empty())
    throw ManifestError("missing or empty 'items' array", "items");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < j["items"].size(); ++i) {
    const json& ji = j["items"][i];
    ManifestItem it;
    it.path = require_string(ji, i, "path");
    it.id = ji.value("id", it.path);
    if (!ids.insert(it.id).second)
      throw ManifestError("duplicate item id '" + it.id + "'",
                          field_path(i, "id"));
    it.style_id = ji.value("style_id", "");
    it.instance_id = ji.value("instance_id", "");
    it.lighting_id = ji.value("lighting_id", "");
    it.character_id = ji.value("character_id", "");
    it.reference_id = ji.value("reference_id", "");
    it.distortion_type = ji.value("distortion_type", "");
    it.group_id = ji.value("group_id", "");
    it.video_id = ji.value("video_id", "");
    it.role = ji.value("role", "");
    if (ji.contains("consistency_weight"))
      it.consistency_weight = ji["consistency_weight"].get<double>();
    if (ji.contains("human_rating"))
      it.human_rating = ji["human_rating"].get<double>();
    if (ji.contains("distortion_level"))
      it.distortion_level = ji["distortion_level"].get<int>();
    if (ji.contains("frame_index"))
      it.frame_index = ji["frame_index"].get<int>();

    const std::filesystem::path img(it.path);
    const auto resolved = img.is_absolute() ? img : m.dir / img;
    if (!std::filesystem::exists(resolved))
      throw ManifestError("image path does not exist: " + resolved.string(),
                          field_path(i, "path"));
    m.items.push_back(std::move(it));
  }

  if (j.contains("triplets")) {
    for (std::size_t i = 0; i < j["triplets"].size(); ++i) {
      const json& jt = j["triplets"][i];
      NightsTriplet t;
      t.ref = jt.at("ref").get<std::string>();
      t.cand0 = jt.at("cand0").get<std::string>();
      t.cand1 = jt.at("cand1").get<std::string>();
      t.gt_index = jt.at("gt_index").get<int>();
      m.triplets.push_back(std::move(t));
    }
  }

  validate_per_benchmark(m);
  return m;
}

std::vector<std::string> load_frame_sequence(const DatasetManifest& manifest,
                                             const std::string& video_id) {
  if (manifest.benchmark != BenchmarkId::tiktok)
    throw ConfigError("frame sequences require a tiktok manifest");
  std::vector<const ManifestItem*> frames;
  for (const auto& it : manifest.items)
    if (it.video_id == video_id) frames.push_back(&it);
  if (frames.empty())
    throw ManifestError("unknown video id '" + video_id + "'", "video_id");
  std::sort(frames.begin(), frames.end(),
            [](const ManifestItem* a, const ManifestItem* b) {
              return *a->frame_index < *b->frame_index;
            });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (*frames[i]->frame_index != static_cast<int>(i))
      throw ManifestError(
          "video '" + video_id + "' is missing frame " + std::to_string(i),
          "frame_index");
    ids.push_back(frames[i]->id);
  }
  return ids;
}

}  // namespace diffsim
