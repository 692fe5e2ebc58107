// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace diffsim {

enum class BenchmarkId {
  nights,
  dreambench_pp,
  cute,
  ip_bench,
  tid2013,
  sref,
  instantstyle,
  tiktok,
};

const char* to_string(BenchmarkId id);
BenchmarkId benchmark_from_string(const std::string& s);

// One image entry; which optional fields are required depends on the
// benchmark (docs/manifests.md has the schema and one example each).
struct ManifestItem {
  std::string id;    // defaults to `path` when omitted
  std::string path;  // as written in the manifest (relative to its dir)
  std::string style_id;
  std::string instance_id;
  std::string lighting_id;
  std::string character_id;
  std::string reference_id;
  std::string distortion_type;
  std::string group_id;
  std::string video_id;
  std::string role;  // "reference" | "variant" | "generated"
  std::optional<double> consistency_weight;
  std::optional<double> human_rating;
  std::optional<int> distortion_level;
  std::optional<int> frame_index;
};

// NIGHTS ships human-voted triplets; they are consumed as-is.
struct NightsTriplet {
  std::string ref;
  std::string cand0;
  std::string cand1;
  int gt_index = 0;
};

struct DatasetManifest {
  BenchmarkId benchmark = BenchmarkId::nights;
  std::filesystem::path dir;  // directory of the manifest file
  std::vector<ManifestItem> items;
  std::vector<NightsTriplet> triplets;  // nights only

  const ManifestItem& item(const std::string& id) const;
  std::filesystem::path resolve(const std::string& id) const;
};

// Validates and rejects rather than repairs: schema violations carry the
// offending field path, dangling image paths and duplicate ids are errors.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Frames of one video in ascending frame index, starting at frame 0;
// non-contiguous indices are an error.
std::vector<std::string> load_frame_sequence(const DatasetManifest& manifest,
                                             const std::string& video_id);

}  // namespace diffsim
