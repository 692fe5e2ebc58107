// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffsim/manifest.hpp"

namespace diffsim {

// One 2AFC comparison: a reference plus two candidates, gt_index marking
// the candidate the benchmark's rule designates as closer.
struct TripletRecord {
  std::string id;
  std::string ref;
  std::string cand0;
  std::string cand1;
  int gt_index = 0;
  BenchmarkId benchmark = BenchmarkId::nights;
  // Construction provenance (styles, levels, weights, ratings, ...) so the
  // benchmark rule can be re-checked from the record alone.
  std::map<std::string, std::string> meta;
  // Image paths as written in the manifest; consumers resolve them
  // against an images root.
  std::string ref_path;
  std::string cand0_path;
  std::string cand1_path;
};

// Seeded construction of each benchmark's triplet protocol. Deterministic
// given (manifest, seed); `count_override` replaces the protocol's sample
// count for the benchmarks that sample a fixed total.
std::vector<TripletRecord> build_triplets(
    const DatasetManifest& manifest, std::uint64_t seed,
    std::optional<std::size_t> count_override = std::nullopt);

// JSONL serialization: one record per line, stable field order.
std::string to_jsonl_line(const TripletRecord& record);
TripletRecord triplet_from_json_line(const std::string& line);
void write_triplets_jsonl(const std::filesystem::path& path,
                          const std::vector<TripletRecord>& records);
std::vector<TripletRecord> read_triplets_jsonl(
    const std::filesystem::path& path);

}  // namespace diffsim
