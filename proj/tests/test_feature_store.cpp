// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <thread>

#include "diffsim/feature_store.hpp"
#include "diffsim/safetensors.hpp"
#include "diffsim/schedule.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace diffsim;
using testutil::TempDir;

namespace {

CacheKey key_for(int i) {
  CacheKey k;
  k.image_hash = "hash" + std::to_string(i);
  k.backend_id = "toy-self";
  k.site = "toy-self/self/0/0@t500/r16";
  k.noise_seed = 7;
  k.resolution = 16;
  return k;
}

ProjectedLatents latents_for(std::uint64_t seed, int heads = 2, int tq = 4,
                             int tkv = 5, int dh = 3) {
  auto p = oracle::random_latents<float>(seed, heads, tq, tkv, dh);
  p.site = AttentionSite::parse("toy-self/self/0/0@t500/r16");
  return p;
}

}  // namespace

TEST_CASE("round trip is bit-exact over 50 random tensors") {
  TempDir dir("store");
  FeatureStore store(dir / "cache");
  for (int i = 0; i < 50; ++i) {
    const auto v = latents_for(static_cast<std::uint64_t>(i + 1), 1 + i % 3,
                               1 + i % 5, 1 + (i * 7) % 5, 1 + i % 4);
    const auto k = key_for(i);
    store.put(k, v);
    const auto got = store.get(k);
    REQUIRE(got.has_value());
    REQUIRE(got->heads() == v.heads());
    for (int h = 0; h < v.heads(); ++h) {
      CHECK(got->q[static_cast<std::size_t>(h)] == v.q[static_cast<std::size_t>(h)]);
      CHECK(got->k[static_cast<std::size_t>(h)] == v.k[static_cast<std::size_t>(h)]);
      CHECK(got->v[static_cast<std::size_t>(h)] == v.v[static_cast<std::size_t>(h)]);
    }
    CHECK(got->source_id == v.source_id);
    CHECK(got->site == v.site);
  }
}

TEST_CASE("unknown key reads as absent") {
  TempDir dir("absent");
  FeatureStore store(dir / "cache");
  CHECK(!store.get(key_for(12345)).has_value());
  CHECK(!store.contains(key_for(12345)));
}

TEST_CASE("put is idempotent: one entry per key") {
  TempDir dir("idem");
  FeatureStore store(dir / "cache");
  const auto v = latents_for(9);
  store.put(key_for(0), v);
  store.put(key_for(0), v);
  int payloads = 0;
  for (const auto& e :
       std::filesystem::recursive_directory_iterator(store.root()))
    if (e.path().extension() == ".st") ++payloads;
  CHECK(payloads == 1);
  CHECK(store.get(key_for(0)).has_value());
}

TEST_CASE("corrupted payload raises IntegrityError naming the key") {
  TempDir dir("corrupt");
  FeatureStore store(dir / "cache");
  const auto k = key_for(3);
  store.put(k, latents_for(3));

  {
    std::fstream f(store.payload_path(k),
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-4, std::ios::end);
    const char junk[4] = {42, 42, 42, 42};
    f.write(junk, 4);
  }
  try {
    store.get(k);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(e.key() == k.canonical());
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }
}

TEST_CASE("concurrent readers all succeed") {
  TempDir dir("readers");
  FeatureStore store(dir / "cache");
  const auto k = key_for(4);
  const auto v = latents_for(4);
  store.put(k, v);

  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&]() {
      for (int r = 0; r < 5; ++r) {
        const auto got = store.get(k);
        if (got && got->q[0] == v.q[0]) ok.fetch_add(1);
      }
    });
  for (auto& t : threads) t.join();
  CHECK(ok.load() == 40);
}

TEST_CASE("ip token sets round trip") {
  TempDir dir("tokens");
  FeatureStore store(dir / "cache");
  IPTokenSet set;
  Rng rng(5);
  set.tokens = gaussian_matrix<float>(16, 8, rng);
  set.source_id = "img-5";
  CacheKey k = key_for(5);
  k.site = "toy-cross/ip_tokens/r16";
  store.put_tokens(k, set);
  const auto got = store.get_tokens(k);
  REQUIRE(got.has_value());
  CHECK(got->tokens == set.tokens);
  CHECK(got->source_id == set.source_id);
}

TEST_CASE("gc evicts oldest entries down to the budget") {
  TempDir dir("gc");
  FeatureStore store(dir / "cache");
  for (int i = 0; i < 6; ++i) {
    store.put(key_for(i), latents_for(static_cast<std::uint64_t>(i + 1)));
    // distinct mtimes so LRU order is well defined
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
  }
  const auto before = store.size_bytes();
  CHECK(before > 0);

  // touch entry 0 so it becomes most recently used
  CHECK(store.get(key_for(0)).has_value());

  const auto freed = store.gc(before / 2);
  CHECK(freed > 0);
  CHECK(store.size_bytes() <= before / 2);
  CHECK(store.get(key_for(0)).has_value());   // survived via touch
  CHECK(!store.get(key_for(1)).has_value());  // oldest untouched: evicted
}

TEST_CASE("safetensors writer is deterministic") {
  TempDir dir("st");
  TensorMap tm;
  tm["b"] = tensor_from_matrix(MatrixXf::Constant(2, 3, 1.5f));
  tm["a"] = tensor_from_matrix(MatrixXf::Constant(1, 2, -0.5f));
  StringMap meta{{"k", "v"}};
  save_safetensors(dir / "x.st", tm, meta);
  save_safetensors(dir / "y.st", tm, meta);
  std::ifstream fx(dir / "x.st", std::ios::binary);
  std::ifstream fy(dir / "y.st", std::ios::binary);
  const std::string bx((std::istreambuf_iterator<char>(fx)), {});
  const std::string by((std::istreambuf_iterator<char>(fy)), {});
  CHECK(bx == by);

  StringMap meta_back;
  const TensorMap loaded = load_safetensors(dir / "x.st", &meta_back);
  CHECK(loaded.at("a").shape == std::vector<std::int64_t>{1, 2});
  CHECK(meta_back.at("k") == "v");

  // truncation is an integrity error
  {
    std::ofstream f(dir / "trunc.st", std::ios::binary);
    f << bx.substr(0, bx.size() - 8);
  }
  CHECK_THROWS_AS(load_safetensors(dir / "trunc.st"), IntegrityError);
}
