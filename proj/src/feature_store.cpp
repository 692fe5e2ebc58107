// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/feature_store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <vector>

#include "diffsim/errors.hpp"
#include "diffsim/safetensors.hpp"
#include "diffsim/sha256.hpp"
#include "diffsim/version.hpp"
#include "json.hpp"

namespace diffsim {

namespace {

using nlohmann::json;

std::string unique_tmp_suffix() {
  static std::atomic<std::uint64_t> counter{0};
  return ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter.fetch_add(1));
}

void atomic_write(const std::filesystem::path& final_path,
                  const std::string& bytes) {
  const auto tmp = final_path.string() + unique_tmp_suffix();
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write cache file: " + tmp);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) throw IoError("short write to cache file: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, final_path, ec);
  if (ec)
    throw IoError("cannot rename cache file into place: " +
                  final_path.string() + " (" + ec.message() + ")");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read cache file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

json sidecar_json(const CacheKey& key, const TensorMap& tensors,
                  const std::string& checksum) {
  json shapes;
  for (const auto& [name, t] : tensors) shapes[name] = t.shape;
  json side;
  side["key"] = {{"image_hash", key.image_hash},
                 {"backend_id", key.backend_id},
                 {"site", key.site},
                 {"noise_seed", key.noise_seed},
                 {"resolution", key.resolution}};
  side["canonical"] = key.canonical();
  side["shapes"] = shapes;
  side["dtype"] = "f32";
  side["checksum_sha256"] = checksum;
  side["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
  side["writer"] = std::string("diffsim ") + kVersion;
  return side;
}

}  // namespace

FeatureStore::FeatureStore(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec)
    throw IoError("cannot create cache root: " + root_.string() + " (" +
                  ec.message() + ")");
}

std::filesystem::path FeatureStore::payload_path(const CacheKey& key) const {
  return root_ / key.backend_id / (sha256_hex(key.canonical()) + ".st");
}

std::filesystem::path FeatureStore::sidecar_path(const CacheKey& key) const {
  return root_ / key.backend_id / (sha256_hex(key.canonical()) + ".json");
}

namespace {

void store_entry(const FeatureStore& store, const CacheKey& key,
                 const TensorMap& tensors, const StringMap& metadata) {
  const auto payload = store.payload_path(key);
  std::error_code ec;
  std::filesystem::create_directories(payload.parent_path(), ec);
  if (ec)
    throw IoError("cannot create cache directory: " +
                  payload.parent_path().string() + " (" + ec.message() + ")");

  // Serialize through a temp file to reuse the deterministic writer, then
  // stage bytes for the atomic rename.
  const auto tmp = payload.string() + ".ser" + std::to_string(::getpid());
  save_safetensors(tmp, tensors, metadata);
  const std::string bytes = read_file(tmp);
  std::filesystem::remove(tmp, ec);

  atomic_write(payload, bytes);
  // Sidecar written last: an entry without a sidecar reads as absent.
  const auto side = sidecar_json(key, tensors, sha256_hex(bytes));
  atomic_write(store.sidecar_path(key), side.dump(2) + "\n");
}

// Returns the tensors iff the entry exists and passes its checksum.
std::optional<TensorMap> load_entry(const FeatureStore& store,
                                    const CacheKey& key, StringMap* metadata) {
  const auto payload = store.payload_path(key);
  const auto side_path = store.sidecar_path(key);
  if (!std::filesystem::exists(side_path) ||
      !std::filesystem::exists(payload))
    return std::nullopt;

  json side;
  try {
    side = json::parse(read_file(side_path));
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("unparseable cache sidecar: ") + e.what(),
                         key.canonical());
  }
  const std::string bytes = read_file(payload);
  const std::string want = side.value("checksum_sha256", "");
  const std::string got = sha256_hex(bytes);
  if (want != got)
    throw IntegrityError("cache payload checksum mismatch (stored " + want +
                             ", computed " + got + ")",
                         key.canonical());

  // Refresh mtime so gc sees this entry as recently used.
  std::error_code ec;
  std::filesystem::last_write_time(
      payload, std::filesystem::file_time_type::clock::now(), ec);

  return load_safetensors(payload, metadata);
}

}  // namespace

void FeatureStore::put(const CacheKey& key, const ProjectedLatents& latents) {
  latents.validate();
  TensorMap tensors;
  tensors["q"] = tensor_from_heads(latents.q);
  tensors["k"] = tensor_from_heads(latents.k);
  tensors["v"] = tensor_from_heads(latents.v);
  StringMap meta;
  meta["site"] = latents.site.canonical();
  meta["source_id"] = latents.source_id;
  store_entry(*this, key, tensors, meta);
}

std::optional<ProjectedLatents> FeatureStore::get(const CacheKey& key) const {
  StringMap meta;
  auto tensors = load_entry(*this, key, &meta);
  if (!tensors) return std::nullopt;
  if (!tensors->count("q") || !tensors->count("k") || !tensors->count("v"))
    throw IntegrityError("cache entry missing q/k/v tensors", key.canonical());
  ProjectedLatents latents;
  latents.q = heads_from_tensor(tensors->at("q"));
  latents.k = heads_from_tensor(tensors->at("k"));
  latents.v = heads_from_tensor(tensors->at("v"));
  latents.site = AttentionSite::parse(meta.at("site"));
  latents.source_id = meta.at("source_id");
  latents.validate();
  return latents;
}

void FeatureStore::put_tokens(const CacheKey& key, const IPTokenSet& tokens) {
  TensorMap tensors;
  tensors["tokens"] = tensor_from_matrix(tokens.tokens);
  StringMap meta;
  meta["source_id"] = tokens.source_id;
  meta["kind"] = "ip_tokens";
  store_entry(*this, key, tensors, meta);
}

std::optional<IPTokenSet> FeatureStore::get_tokens(const CacheKey& key) const {
  StringMap meta;
  auto tensors = load_entry(*this, key, &meta);
  if (!tensors) return std::nullopt;
  if (!tensors->count("tokens"))
    throw IntegrityError("cache entry missing tokens tensor", key.canonical());
  IPTokenSet set;
  set.tokens = matrix_from_tensor(tensors->at("tokens"));
  set.source_id = meta.at("source_id");
  return set;
}

bool FeatureStore::contains(const CacheKey& key) const {
  return std::filesystem::exists(sidecar_path(key)) &&
         std::filesystem::exists(payload_path(key));
}

std::uintmax_t FeatureStore::size_bytes() const {
  std::uintmax_t total = 0;
  std::error_code ec;
  for (auto it = std::filesystem::recursive_directory_iterator(root_, ec);
       it != std::filesystem::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file(ec)) total += it->file_size(ec);
  }
  return total;
}

std::uintmax_t FeatureStore::gc(std::uintmax_t max_bytes) {
  struct Entry {
    std::filesystem::path payload;
    std::filesystem::file_time_type mtime;
    std::uintmax_t bytes;
  };
  std::vector<Entry> entries;
  std::uintmax_t total = 0;
  std::error_code ec;
  for (auto it = std::filesystem::recursive_directory_iterator(root_, ec);
       it != std::filesystem::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file(ec) || it->path().extension() != ".st") continue;
    Entry e;
    e.payload = it->path();
    e.mtime = std::filesystem::last_write_time(e.payload, ec);
    e.bytes = it->file_size(ec);
    auto sidecar = e.payload;
    sidecar.replace_extension(".json");
    if (std::filesystem::exists(sidecar))
      e.bytes += std::filesystem::file_size(sidecar, ec);
    total += e.bytes;
    entries.push_back(std::move(e));
  }
  if (total <= max_bytes) return 0;

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mtime != b.mtime) return a.mtime < b.mtime;
    return a.payload < b.payload;
  });

  std::uintmax_t freed = 0;
  for (const auto& e : entries) {
    if (total - freed <= max_bytes) break;
    auto sidecar = e.payload;
    sidecar.replace_extension(".json");
    // Sidecar first so a concurrent reader never validates a half-removed
    // entry.
    std::filesystem::remove(sidecar, ec);
    std::filesystem::remove(e.payload, ec);
    freed += e.bytes;
  }
  return freed;
}

}  // namespace diffsim
