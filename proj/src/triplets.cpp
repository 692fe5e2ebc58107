// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/triplets.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "diffsim/errors.hpp"
#include "diffsim/rng.hpp"
#include "json.hpp"

namespace diffsim {

namespace {

using ordered_json = nlohmann::ordered_json;

// Fixed sample totals from the published protocols; CUTE / IP / TID2013 /
// NIGHTS scale with the manifest instead.
constexpr std::size_t kSrefTarget = 2000;
constexpr std::size_t kInstantStyleTarget = 2000;
constexpr std::size_t kDreambenchTarget = 937;
constexpr int kCuteRepeatsPerInstance = 10;
constexpr int kIpRepeatsPerCharacter = 5;

std::string triplet_id(BenchmarkId bench, std::size_t index) {
  std::ostringstream os;
  os << to_string(bench) << '-';
  os.width(6);
  os.fill('0');
  os << index;
  return os.str();
}

struct Builder {
  const DatasetManifest& m;
  Rng rng;
  std::vector<TripletRecord> out;

  Builder(const DatasetManifest& manifest, std::uint64_t seed)
      : m(manifest),
        rng(derive_stream(seed, to_string(manifest.benchmark))) {}

  // Candidate order is randomized so position carries no signal.
  void emit(const std::string& ref, const std::string& positive,
            const std::string& negative,
            std::map<std::string, std::string> meta) {
    TripletRecord r;
    r.benchmark = m.benchmark;
    r.ref = ref;
    const bool positive_first = rng.index(2) == 0;
    r.cand0 = positive_first ? positive : negative;
    r.cand1 = positive_first ? negative : positive;
    r.gt_index = positive_first ? 0 : 1;
    r.meta = std::move(meta);
    finish(r);
  }

  void finish(TripletRecord& r) {
    r.id = triplet_id(m.benchmark, out.size());
    r.ref_path = m.item(r.ref).path;
    r.cand0_path = m.item(r.cand0).path;
    r.cand1_path = m.item(r.cand1).path;
    out.push_back(std::move(r));
  }
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void build_style(Builder& b, std::size_t target) {
  std::map<std::string, std::vector<std::string>> styles;
  for (const auto& it : b.m.items) styles[it.style_id].push_back(it.id);
  for (auto& [_, v] : styles) std::sort(v.begin(), v.end());
  if (styles.size() < 2)
    throw ManifestError("need at least 2 styles to build triplets",
                        "items.style_id");
  std::vector<std::string> names;
  for (const auto& [k, _] : styles) names.push_back(k);

  while (b.out.size() < target) {
    const std::size_t si = b.rng.index(names.size());
    const auto& same = styles[names[si]];
    auto [ri, pi] = b.rng.distinct_pair(same.size());
    std::size_t oi = b.rng.index(names.size() - 1);
    if (oi >= si) ++oi;
    const auto& other = styles[names[oi]];
    const std::string neg = other[b.rng.index(other.size())];
    b.emit(same[ri], same[pi], neg,
           {{"ref_style", names[si]},
            {"positive_style", names[si]},
            {"negative_style", names[oi]}});
  }
}

void build_dreambench(Builder& b, std::size_t target) {
  struct Group {
    std::string ref;
    std::vector<const ManifestItem*> generated;
  };
  std::map<std::string, Group> groups;
  for (const auto& it : b.m.items) {
    if (it.role == "reference")
      groups[it.group_id].ref = it.id;
    else
      groups[it.group_id].generated.push_back(&it);
  }
  std::vector<const Group*> usable;
  for (auto& [_, g] : groups) {
    std::sort(g.generated.begin(), g.generated.end(),
              [](const ManifestItem* a, const ManifestItem* b2) {
                return a->id < b2->id;
              });
    if (g.generated.size() >= 2) usable.push_back(&g);
  }
  if (usable.empty())
    throw ManifestError("no group has 2+ generated images", "items.group_id");

  // Rating ties are skipped and resampled; the rule is undefined on them.
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * (target + 1);
  while (b.out.size() < target) {
    if (++attempts > max_attempts)
      throw ManifestError(
          "cannot reach target triplet count; ratings too uniform",
          "items.human_rating");
    const Group& g = *usable[b.rng.index(usable.size())];
    auto [i0, i1] = b.rng.distinct_pair(g.generated.size());
    const ManifestItem* a = g.generated[i0];
    const ManifestItem* c = g.generated[i1];
    if (*a->human_rating == *c->human_rating) continue;
    const ManifestItem* pos = *a->human_rating > *c->human_rating ? a : c;
    const ManifestItem* neg = pos == a ? c : a;
    b.emit(g.ref, pos->id, neg->id,
           {{"positive_rating", fmt_double(*pos->human_rating)},
            {"negative_rating", fmt_double(*neg->human_rating)}});
  }
}

void build_cute(Builder& b) {
  // instance -> lighting -> image ids
  std::map<std::string, std::map<std::string, std::vector<std::string>>> by_instance;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> by_lighting;
  for (const auto& it : b.m.items) {
    by_instance[it.instance_id][it.lighting_id].push_back(it.id);
    by_lighting[it.lighting_id][it.instance_id].push_back(it.id);
  }
  for (auto& [_, m2] : by_instance)
    for (auto& [_, v] : m2) std::sort(v.begin(), v.end());
  for (auto& [_, m2] : by_lighting)
    for (auto& [_, v] : m2) std::sort(v.begin(), v.end());

  for (const auto& [instance, lightings] : by_instance) {
    // Lightings usable for this instance: 2+ own images and at least one
    // other-instance image under the same lighting.
    std::vector<std::string> eligible;
    for (const auto& [lighting, imgs] : lightings) {
      if (imgs.size() < 2) continue;
      const auto& instances_here = by_lighting[lighting];
      std::size_t others = 0;
      for (const auto& [inst2, v] : instances_here)
        if (inst2 != instance) others += v.size();
      if (others > 0) eligible.push_back(lighting);
    }
    if (eligible.empty())
      throw ManifestError("instance '" + instance +
                              "' has no lighting with two images and a "
                              "same-lighting negative",
                          "items.instance_id=" + instance);

    for (int rep = 0; rep < kCuteRepeatsPerInstance; ++rep) {
      const std::string lighting = eligible[b.rng.index(eligible.size())];
      const auto& own = lightings.at(lighting);
      auto [ri, pi] = b.rng.distinct_pair(own.size());
      std::vector<std::string> negatives;
      for (const auto& [inst2, v] : by_lighting[lighting])
        if (inst2 != instance)
          negatives.insert(negatives.end(), v.begin(), v.end());
      const std::string neg = negatives[b.rng.index(negatives.size())];
      b.emit(own[ri], own[pi], neg,
             {{"instance", instance},
              {"lighting", lighting},
              {"negative", neg}});
    }
  }
}

void build_ip(Builder& b) {
  struct Character {
    std::string ref;
    std::vector<const ManifestItem*> variants;
  };
  std::map<std::string, Character> chars;
  for (const auto& it : b.m.items) {
    if (it.role == "reference")
      chars[it.character_id].ref = it.id;
    else
      chars[it.character_id].variants.push_back(&it);
  }
  for (auto& [name, ch] : chars) {
    std::sort(ch.variants.begin(), ch.variants.end(),
              [](const ManifestItem* a, const ManifestItem* b2) {
                return a->id < b2->id;
              });
    if (ch.variants.size() < 2)
      throw ManifestError("character '" + name + "' needs 2+ variants",
                          "items.character_id=" + name);
  }

  for (const auto& [name, ch] : chars) {
    std::size_t attempts = 0;
    for (int rep = 0; rep < kIpRepeatsPerCharacter; ++rep) {
      if (++attempts > 1000)
        throw ManifestError("character '" + name +
                                "' has too few distinct consistency weights",
                            "items.consistency_weight");
      auto [i0, i1] = b.rng.distinct_pair(ch.variants.size());
      const ManifestItem* a = ch.variants[i0];
      const ManifestItem* c = ch.variants[i1];
      if (*a->consistency_weight == *c->consistency_weight) {
        --rep;
        continue;
      }
      const ManifestItem* pos =
          *a->consistency_weight > *c->consistency_weight ? a : c;
      const ManifestItem* neg = pos == a ? c : a;
      b.emit(ch.ref, pos->id, neg->id,
             {{"character", name},
              {"positive_weight", fmt_double(*pos->consistency_weight)},
              {"negative_weight", fmt_double(*neg->consistency_weight)}});
    }
  }
}

void build_tid2013(Builder& b) {
  // (reference, distortion type) -> level -> image id. One triplet per
  // pair, which is exactly the published total on the full dataset.
  std::map<std::string, std::map<std::string, std::map<int, std::string>>> table;
  for (const auto& it : b.m.items)
    if (it.role == "distorted")
      table[it.reference_id][it.distortion_type][*it.distortion_level] = it.id;

  for (const auto& [ref, types] : table) {
    for (const auto& [type, levels] : types) {
      if (levels.size() < 2)
        throw ManifestError("reference '" + ref + "' distortion '" + type +
                                "' needs 2+ levels",
                            "items.distortion_level");
      std::vector<std::pair<int, std::string>> ordered(levels.begin(),
                                                       levels.end());
      auto [i0, i1] = b.rng.distinct_pair(ordered.size());
      const auto& low = ordered[std::min(i0, i1)];
      const auto& high = ordered[std::max(i0, i1)];
      b.emit(ref, low.second, high.second,
             {{"distortion_type", type},
              {"positive_level", std::to_string(low.first)},
              {"negative_level", std::to_string(high.first)}});
    }
  }
}

void build_nights(Builder& b) {
  for (const auto& t : b.m.triplets) {
    TripletRecord r;
    r.benchmark = b.m.benchmark;
    r.ref = t.ref;
    r.cand0 = t.cand0;
    r.cand1 = t.cand1;
    r.gt_index = t.gt_index;
    r.meta = {{"source", "manifest"}};
    b.finish(r);
  }
}

}  // namespace

std::vector<TripletRecord> build_triplets(
    const DatasetManifest& manifest, std::uint64_t seed,
    std::optional<std::size_t> count_override) {
  Builder b(manifest, seed);
  switch (manifest.benchmark) {
    case BenchmarkId::sref:
      build_style(b, count_override.value_or(kSrefTarget));
      break;
    case BenchmarkId::instantstyle:
      build_style(b, count_override.value_or(kInstantStyleTarget));
      break;
    case BenchmarkId::dreambench_pp:
      build_dreambench(b, count_override.value_or(kDreambenchTarget));
      break;
    case BenchmarkId::cute:
      build_cute(b);
      break;
    case BenchmarkId::ip_bench:
      build_ip(b);
      break;
    case BenchmarkId::tid2013:
      build_tid2013(b);
      break;
    case BenchmarkId::nights:
      build_nights(b);
      break;
    case BenchmarkId::tiktok:
      throw ConfigError(
          "tiktok is a frame-sequence benchmark; it has no triplet protocol");
  }
  return std::move(b.out);
}

std::string to_jsonl_line(const TripletRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["benchmark"] = to_string(r.benchmark);
  j["ref"] = r.ref;
  j["cand"] = {r.cand0, r.cand1};
  j["gt_index"] = r.gt_index;
  j["ref_path"] = r.ref_path;
  j["cand_paths"] = {r.cand0_path, r.cand1_path};
  ordered_json meta;
  for (const auto& [k, v] : r.meta) meta[k] = v;
  j["meta"] = meta;
  return j.dump();
}

TripletRecord triplet_from_json_line(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("unparseable triplet line: ") + e.what());
  }
  TripletRecord r;
  r.id = j.at("id").get<std::string>();
  r.benchmark = benchmark_from_string(j.at("benchmark").get<std::string>());
  r.ref = j.at("ref").get<std::string>();
  r.cand0 = j.at("cand")[0].get<std::string>();
  r.cand1 = j.at("cand")[1].get<std::string>();
  r.gt_index = j.at("gt_index").get<int>();
  r.ref_path = j.value("ref_path", r.ref);
  if (j.contains("cand_paths")) {
    r.cand0_path = j["cand_paths"][0].get<std::string>();
    r.cand1_path = j["cand_paths"][1].get<std::string>();
  } else {
    r.cand0_path = r.cand0;
    r.cand1_path = r.cand1;
  }
  if (j.contains("meta"))
    for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it)
      r.meta[it.key()] = it.value().get<std::string>();
  if (r.gt_index != 0 && r.gt_index != 1)
    throw ValidationError("triplet gt_index must be 0 or 1");
  return r;
}

void write_triplets_jsonl(const std::filesystem::path& path,
                          const std::vector<TripletRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write triplets file: " + path.string());
  for (const auto& r : records) os << to_jsonl_line(r) << '\n';
  os.flush();
  if (!os) throw IoError("short write: " + path.string());
}

std::vector<TripletRecord> read_triplets_jsonl(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open triplets file: " + path.string());
  std::vector<TripletRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(triplet_from_json_line(line));
  }
  return out;
}

}  // namespace diffsim
