// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "diffsim/types.hpp"

namespace diffsim {

// Content-addressed on-disk cache of projected latents and IP token sets.
// One safetensors payload plus a JSON sidecar (shapes, dtype, checksum,
// creation metadata) per key, grouped in one directory per backend.
// Tensors are stored as little-endian f32. Writers stage to a temp file
// and rename, so readers only ever see complete entries; identical keys
// have deterministic contents, making last-writer-wins benign.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  void put(const CacheKey& key, const ProjectedLatents& latents);

  // Empty optional when the key is absent. Throws IntegrityError when the
  // payload no longer matches the sidecar checksum.
  std::optional<ProjectedLatents> get(const CacheKey& key) const;

  void put_tokens(const CacheKey& key, const IPTokenSet& tokens);
  std::optional<IPTokenSet> get_tokens(const CacheKey& key) const;

  bool contains(const CacheKey& key) const;

  std::uintmax_t size_bytes() const;

  // Evicts least-recently-used entries (payload mtime, refreshed on get)
  // until total size fits max_bytes. Returns the number of bytes freed.
  std::uintmax_t gc(std::uintmax_t max_bytes);

  std::filesystem::path payload_path(const CacheKey& key) const;
  std::filesystem::path sidecar_path(const CacheKey& key) const;

 private:
  std::filesystem::path root_;
};

}  // namespace diffsim
