// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "diffsim/triplets.hpp"
#include "diffsim/types.hpp"

namespace diffsim {

// Scores one (reference, candidate) pair given their path strings. The
// production scorer wraps compute_pair_score; tests plug oracles and
// transformed metrics.
using PairScoreFn =
    std::function<double(const std::string& ref, const std::string& cand)>;

struct PerTripletResult {
  std::string id;
  double score0 = 0.0;
  double score1 = 0.0;
  int choice = -1;  // argmax candidate; -1 on an exact tie
  bool correct = false;
};

struct BenchmarkReport {
  std::string benchmark;
  MetricConfig config;
  std::size_t n_triplets = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;  // exactly n_correct / n_triplets
  std::vector<PerTripletResult> per_triplet;
  std::vector<std::pair<MetricConfig, double>> grid_table;
  std::string best_config;  // canonical form of the argmax config
  std::map<std::string, std::string> environment;
};

// 2AFC accuracy: choice = argmax of the two scores, exact ties counted
// incorrect. Scoring failures abort with the triplet id; nothing is
// silently skipped. `jobs` parallelizes across triplets; results are
// placed by index, so output is schedule-independent.
BenchmarkReport evaluate_triplets(const PairScoreFn& scorer,
                                  const std::vector<TripletRecord>& triplets,
                                  int jobs = 1);

// Evaluates every config in the grid, returns the best report with the
// full grid table attached. Accuracy ties break toward the smaller
// canonical config string.
BenchmarkReport grid_search(
    const std::vector<MetricConfig>& grid,
    const std::function<PairScoreFn(const MetricConfig&)>& scorer_factory,
    const std::vector<TripletRecord>& triplets, int jobs = 1);

// Majority vote over an odd number (>= 3) of per-triplet choices.
int ensemble_vote(const std::vector<int>& choices);

// Joins per-metric choice files against ground truth; each entry of
// `voter_choices` maps triplet id -> choice in {0, 1}.
BenchmarkReport ensemble_evaluate(
    const std::vector<std::map<std::string, int>>& voter_choices,
    const std::vector<TripletRecord>& triplets);

// Population variance of scores between frame 0 and each later frame;
// 0 when fewer than two scores exist. Frame list must be nonempty.
double video_consistency_variance(const PairScoreFn& scorer,
                                  const std::vector<std::string>& frames);

enum class ReportFormat { json, csv, markdown, plot };

// Deterministic serialization; plots render accuracy-vs-timestep and
// accuracy-vs-block SVG line charts when a grid table is present.
// Returns the files written.
std::vector<std::filesystem::path> emit_report(
    const BenchmarkReport& report, const std::set<ReportFormat>& formats,
    const std::filesystem::path& out_dir);

// report.json round-trip for the core fields.
std::string report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const std::string& text);

// Per-triplet choice files for ensembling (jsonl: {"id":..., "choice":0|1}).
void write_choices_jsonl(const std::filesystem::path& path,
                         const BenchmarkReport& report);
std::map<std::string, int> read_choices_jsonl(
    const std::filesystem::path& path);

// The paper-style sweep: every self-attention layer address crossed with
// timesteps 100..900 step 100 for diffusion backends; plain layer sweep
// for transformer backends.
std::vector<MetricConfig> default_grid(const std::string& backend_id,
                                       const MetricConfig& base);

// Structured MetricConfig serialization shared by reports and the CLI.
std::string config_to_json(const MetricConfig& config);
MetricConfig config_from_json(const std::string& text);

}  // namespace diffsim
