// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pairwise top-k retrieval. DiffSim has no single-vector embedding, so
// every query is O(N) pair scores over the corpus; cached projections make
// that tractable.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "diffsim/types.hpp"

namespace diffsim {

class FeatureStore;

// Maps a corpus image id to its file path.
using ImageResolver =
    std::function<std::filesystem::path(const std::string& id)>;

struct RetrievalHit {
  std::string id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalHit> ranking;  // descending score, id-ascending ties
  // Set when k exceeded the corpus and the full ranking was returned.
  bool truncated = false;
};

// Caches ProjectedLatents for every corpus image; idempotent.
void precompute_corpus(const MetricConfig& config,
                       const std::vector<std::string>& corpus,
                       const ImageResolver& resolve, FeatureStore* store,
                       int jobs = 1);

// Scores the query against every corpus image and returns the top k.
// `exclude_query` drops an id equal to the query id from the results.
RetrievalResult query_topk(const MetricConfig& config, const std::string& query,
                           const std::vector<std::string>& corpus, int k,
                           const ImageResolver& resolve, FeatureStore* store,
                           bool exclude_query = true, int jobs = 1);

}  // namespace diffsim
