// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/retrieval.hpp"

#include <algorithm>

#include "diffsim/backend.hpp"
#include "diffsim/errors.hpp"
#include "diffsim/parallel.hpp"

namespace diffsim {

void precompute_corpus(const MetricConfig& config,
                       const std::vector<std::string>& corpus,
                       const ImageResolver& resolve, FeatureStore* store,
                       int jobs) {
  config.validate();
  const auto& backend = BackendRegistry::instance().get(config.site.backend_id);
  parallel_indexed(corpus.size(), jobs, [&](std::size_t i) {
    try {
      extract_for_config(backend, config, resolve(corpus[i]), store);
    } catch (const IoError& e) {
      throw IoError("corpus image '" + corpus[i] + "': " + e.what());
    }
  });
}

RetrievalResult query_topk(const MetricConfig& config, const std::string& query,
                           const std::vector<std::string>& corpus, int k,
                           const ImageResolver& resolve, FeatureStore* store,
                           bool exclude_query, int jobs) {
  if (k < 1) throw ConfigError("query_topk: k must be >= 1");
  if (corpus.empty()) throw ConfigError("query_topk: empty corpus");
  config.validate();
  const auto& backend = BackendRegistry::instance().get(config.site.backend_id);

  std::vector<std::string> candidates;
  for (const auto& id : corpus)
    if (!(exclude_query && id == query)) candidates.push_back(id);
  if (candidates.empty())
    throw ConfigError("query_topk: corpus holds only the query itself");

  std::vector<RetrievalHit> hits(candidates.size());
  const auto query_path = resolve(query);
  parallel_indexed(candidates.size(), jobs, [&](std::size_t i) {
    const SimilarityScore s = compute_pair_score(
        backend, config, query_path, resolve(candidates[i]), store);
    hits[i] = {candidates[i], s.value};
  });

  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a,
                                         const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  RetrievalResult result;
  if (static_cast<std::size_t>(k) >= hits.size()) {
    result.truncated = static_cast<std::size_t>(k) > hits.size();
    result.ranking = std::move(hits);
  } else {
    result.ranking.assign(hits.begin(), hits.begin() + k);
  }
  return result;
}

}  // namespace diffsim
