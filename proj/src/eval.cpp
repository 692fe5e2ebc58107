// Copyright (c) 2026 The diffsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffsim/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "diffsim/backend.hpp"
#include "diffsim/errors.hpp"
#include "diffsim/parallel.hpp"
#include "diffsim/plot.hpp"
#include "diffsim/version.hpp"
#include "json.hpp"

namespace diffsim {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

BenchmarkReport evaluate_triplets(const PairScoreFn& scorer,
                                  const std::vector<TripletRecord>& triplets,
                                  int jobs) {
  if (triplets.empty())
    throw ConfigError("evaluate_triplets: empty triplet list");

  BenchmarkReport report;
  report.benchmark = to_string(triplets.front().benchmark);
  report.n_triplets = triplets.size();
  report.per_triplet.resize(triplets.size());

  parallel_indexed(triplets.size(), jobs, [&](std::size_t i) {
    const TripletRecord& t = triplets[i];
    PerTripletResult r;
    r.id = t.id;
    try {
      r.score0 = scorer(t.ref_path, t.cand0_path);
      r.score1 = scorer(t.ref_path, t.cand1_path);
    } catch (const Error& e) {
      throw Error("triplet " + t.id + ": " + e.what());
    }
    if (r.score0 == r.score1) {
      r.choice = -1;  // exact tie: counted incorrect
      r.correct = false;
    } else {
      r.choice = r.score0 > r.score1 ? 0 : 1;
      r.correct = r.choice == t.gt_index;
    }
    report.per_triplet[i] = std::move(r);
  });

  for (const auto& r : report.per_triplet)
    if (r.correct) ++report.n_correct;
  report.accuracy = static_cast<double>(report.n_correct) /
                    static_cast<double>(report.n_triplets);
  return report;
}

BenchmarkReport grid_search(
    const std::vector<MetricConfig>& grid,
    const std::function<PairScoreFn(const MetricConfig&)>& scorer_factory,
    const std::vector<TripletRecord>& triplets, int jobs) {
  if (grid.empty()) throw ConfigError("grid_search: empty grid");

  std::vector<BenchmarkReport> reports;
  reports.reserve(grid.size());
  for (const auto& config : grid) {
    BenchmarkReport r = evaluate_triplets(scorer_factory(config), triplets, jobs);
    r.config = config;
    reports.push_back(std::move(r));
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const double a = reports[i].accuracy, b = reports[best].accuracy;
    if (a > b || (a == b && grid[i].canonical() < grid[best].canonical()))
      best = i;
  }

  BenchmarkReport out = reports[best];
  out.best_config = grid[best].canonical();
  for (std::size_t i = 0; i < grid.size(); ++i)
    out.grid_table.emplace_back(grid[i], reports[i].accuracy);
  std::sort(out.grid_table.begin(), out.grid_table.end(),
            [](const auto& a, const auto& b) {
              return a.first.canonical() < b.first.canonical();
            });
  return out;
}

int ensemble_vote(const std::vector<int>& choices) {
  if (choices.size() < 3 || choices.size() % 2 == 0)
    throw ConfigError(
        "ensemble_vote: need an odd number (>= 3) of voters, got " +
        std::to_string(choices.size()));
  int ones = 0;
  for (int c : choices) {
    if (c != 0 && c != 1)
      throw ValidationError("ensemble_vote: choices must be 0 or 1");
    ones += c;
  }
  return ones * 2 > static_cast<int>(choices.size()) ? 1 : 0;
}

BenchmarkReport ensemble_evaluate(
    const std::vector<std::map<std::string, int>>& voter_choices,
    const std::vector<TripletRecord>& triplets) {
  if (voter_choices.size() < 3 || voter_choices.size() % 2 == 0)
    throw ConfigError("ensemble needs an odd number (>= 3) of choice files");
  if (triplets.empty()) throw ConfigError("ensemble: empty triplet list");

  BenchmarkReport report;
  report.benchmark = to_string(triplets.front().benchmark);
  report.n_triplets = triplets.size();
  for (const auto& t : triplets) {
    std::vector<int> votes;
    for (std::size_t v = 0; v < voter_choices.size(); ++v) {
      auto it = voter_choices[v].find(t.id);
      if (it == voter_choices[v].end())
        throw ValidationError("voter " + std::to_string(v) +
                              " is missing a choice for triplet " + t.id);
      votes.push_back(it->second);
    }
    PerTripletResult r;
    r.id = t.id;
    r.choice = ensemble_vote(votes);
    r.score0 = r.choice == 0 ? 1.0 : 0.0;
    r.score1 = r.choice == 1 ? 1.0 : 0.0;
    r.correct = r.choice == t.gt_index;
    if (r.correct) ++report.n_correct;
    report.per_triplet.push_back(std::move(r));
  }
  report.accuracy = static_cast<double>(report.n_correct) /
                    static_cast<double>(report.n_triplets);
  report.environment["ensemble_voters"] = std::to_string(voter_choices.size());
  return report;
}

double video_consistency_variance(const PairScoreFn& scorer,
                                  const std::vector<std::string>& frames) {
  if (frames.empty())
    throw ConfigError("video_consistency_variance: empty frame list");
  std::vector<double> scores;
  for (std::size_t i = 1; i < frames.size(); ++i)
    scores.push_back(scorer(frames[0], frames[i]));
  if (scores.size() < 2) return 0.0;
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  return var / static_cast<double>(scores.size());
}

// --------------------------------------------------------------------------
// serialization

namespace {

ordered_json config_json(const MetricConfig& c) {
  ordered_json j;
  j["metric"] = to_string(c.metric_kind);
  j["backend"] = c.site.backend_id;
  j["kind"] = to_string(c.site.kind);
  j["block"] = c.site.block;
  j["layer"] = c.site.layer_ordinal;
  if (c.site.timestep) j["timestep"] = *c.site.timestep;
  j["resolution"] = c.site.resolution;
  j["noise_seed"] = c.noise_seed;
  j["shared_noise"] = c.shared_noise;
  j["cosine_mode"] = to_string(c.cosine_mode);
  j["crop_subject"] = c.crop_subject;
  return j;
}

MetricConfig config_from(const ordered_json& j) {
  MetricConfig c;
  c.metric_kind = metric_kind_from_string(j.at("metric").get<std::string>());
  c.site.backend_id = j.at("backend").get<std::string>();
  c.site.kind = attention_kind_from_string(j.at("kind").get<std::string>());
  c.site.block = j.at("block").get<std::string>();
  c.site.layer_ordinal = j.at("layer").get<int>();
  if (j.contains("timestep")) c.site.timestep = j["timestep"].get<int>();
  c.site.resolution = j.at("resolution").get<int>();
  c.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  c.shared_noise = j.at("shared_noise").get<bool>();
  c.cosine_mode = cosine_mode_from_string(j.at("cosine_mode").get<std::string>());
  c.crop_subject = j.at("crop_subject").get<bool>();
  return c;
}

}  // namespace

std::string config_to_json(const MetricConfig& config) {
  return config_json(config).dump();
}

MetricConfig config_from_json(const std::string& text) {
  return config_from(ordered_json::parse(text));
}

std::string report_to_json(const BenchmarkReport& report) {
  ordered_json j;
  j["artifact"] = std::string("diffsim ") + kVersion;
  j["benchmark"] = report.benchmark;
  j["config"] = config_json(report.config);
  j["n_triplets"] = report.n_triplets;
  j["n_correct"] = report.n_correct;
  j["accuracy"] = report.accuracy;
  ordered_json per = ordered_json::array();
  for (const auto& r : report.per_triplet) {
    ordered_json e;
    e["id"] = r.id;
    e["score0"] = r.score0;
    e["score1"] = r.score1;
    e["choice"] = r.choice;
    e["correct"] = r.correct;
    per.push_back(std::move(e));
  }
  j["per_triplet"] = per;
  if (!report.grid_table.empty()) {
    ordered_json grid = ordered_json::array();
    for (const auto& [config, acc] : report.grid_table) {
      ordered_json e;
      e["config"] = config_json(config);
      e["canonical"] = config.canonical();
      e["accuracy"] = acc;
      grid.push_back(std::move(e));
    }
    j["grid_table"] = grid;
    j["best_config"] = report.best_config;
  }
  ordered_json env;
  for (const auto& [k, v] : report.environment) env[k] = v;
  j["environment"] = env;
  return j.dump(2) + "\n";
}

BenchmarkReport report_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  BenchmarkReport r;
  r.benchmark = j.at("benchmark").get<std::string>();
  r.config = config_from(j.at("config"));
  r.n_triplets = j.at("n_triplets").get<std::size_t>();
  r.n_correct = j.at("n_correct").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  for (const auto& e : j.at("per_triplet")) {
    PerTripletResult p;
    p.id = e.at("id").get<std::string>();
    p.score0 = e.at("score0").get<double>();
    p.score1 = e.at("score1").get<double>();
    p.choice = e.at("choice").get<int>();
    p.correct = e.at("correct").get<bool>();
    r.per_triplet.push_back(std::move(p));
  }
  if (j.contains("grid_table")) {
    for (const auto& e : j["grid_table"])
      r.grid_table.emplace_back(config_from(e.at("config")),
                                e.at("accuracy").get<double>());
    r.best_config = j.value("best_config", "");
  }
  if (j.contains("environment"))
    for (auto it = j["environment"].begin(); it != j["environment"].end(); ++it)
      r.environment[it.key()] = it.value().get<std::string>();
  return r;
}

void write_choices_jsonl(const std::filesystem::path& path,
                         const BenchmarkReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write choices file: " + path.string());
  for (const auto& r : report.per_triplet) {
    ordered_json j;
    j["id"] = r.id;
    // Ties carry no information; they are exported as 0 so external
    // ensembles keep a full vote vector.
    j["choice"] = r.choice < 0 ? 0 : r.choice;
    os << j.dump() << '\n';
  }
}

std::map<std::string, int> read_choices_jsonl(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open choices file: " + path.string());
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const ordered_json j = ordered_json::parse(line);
    const int choice = j.at("choice").get<int>();
    if (choice != 0 && choice != 1)
      throw ValidationError("choice file " + path.string() +
                            ": choices must be 0 or 1");
    out[j.at("id").get<std::string>()] = choice;
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(
    const BenchmarkReport& report, const std::set<ReportFormat>& formats,
    const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory: " + out_dir.string());

  std::vector<std::filesystem::path> written;

  if (formats.count(ReportFormat::json)) {
    const auto path = out_dir / "report.json";
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << report_to_json(report);
    written.push_back(path);
  }

  if (formats.count(ReportFormat::csv)) {
    const auto path = out_dir / "report.csv";
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "id,score0,score1,choice,correct\n";
    for (const auto& r : report.per_triplet)
      os << r.id << ',' << fmt_score(r.score0) << ',' << fmt_score(r.score1)
         << ',' << r.choice << ',' << (r.correct ? 1 : 0) << '\n';
    written.push_back(path);
  }

  if (formats.count(ReportFormat::markdown)) {
    const auto path = out_dir / "report.md";
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "# diffsim report\n\n";
    os << "- benchmark: " << report.benchmark << "\n";
    os << "- config: `" << report.config.canonical() << "`\n";
    os << "- triplets: " << report.n_triplets << "\n";
    os << "- correct: " << report.n_correct << "\n";
    os << "- accuracy: " << fmt_score(report.accuracy) << "\n";
    for (const auto& [k, v] : report.environment)
      os << "- " << k << ": " << v << "\n";
    if (!report.grid_table.empty()) {
      os << "\n## Grid\n\n| config | accuracy |\n|---|---|\n";
      for (const auto& [config, acc] : report.grid_table)
        os << "| `" << config.canonical() << "` | " << fmt_score(acc)
           << " |\n";
      os << "\nbest: `" << report.best_config << "`\n";
    }
    written.push_back(path);
  }

  if (formats.count(ReportFormat::plot) && !report.grid_table.empty()) {
    // accuracy vs timestep, one series per block
    std::map<std::string, std::vector<std::pair<double, double>>> by_block;
    std::map<int, std::vector<std::pair<std::string, double>>> by_timestep;
    std::vector<std::string> block_order;
    for (const auto& [config, acc] : report.grid_table) {
      if (config.site.timestep) {
        by_block[config.site.block].emplace_back(
            static_cast<double>(*config.site.timestep), acc);
        by_timestep[*config.site.timestep].emplace_back(config.site.block, acc);
      } else {
        by_block[config.site.block].emplace_back(
            static_cast<double>(config.site.layer_ordinal), acc);
      }
      if (std::find(block_order.begin(), block_order.end(),
                    config.site.block) == block_order.end())
        block_order.push_back(config.site.block);
    }

    {
      std::vector<PlotSeries> series;
      for (const auto& block : block_order) {
        PlotSeries s;
        s.name = block;
        s.points = by_block[block];
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
      }
      const auto path = out_dir / "sweep_timestep.svg";
      write_line_chart_svg(path, report.benchmark + ": accuracy vs timestep",
                           "timestep", "accuracy", series);
      written.push_back(path);
    }
    if (!by_timestep.empty()) {
      std::vector<PlotSeries> series;
      for (const auto& [t, entries] : by_timestep) {
        PlotSeries s;
        s.name = "t=" + std::to_string(t);
        for (const auto& [block, acc] : entries) {
          const auto pos = std::find(block_order.begin(), block_order.end(),
                                     block) - block_order.begin();
          s.points.emplace_back(static_cast<double>(pos), acc);
        }
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
      }
      std::vector<std::string> tick_labels = block_order;
      const auto path = out_dir / "sweep_block.svg";
      write_line_chart_svg(path, report.benchmark + ": accuracy vs block",
                           "block", "accuracy", series, tick_labels);
      written.push_back(path);
    }
  }

  return written;
}

std::vector<MetricConfig> default_grid(const std::string& backend_id,
                                       const MetricConfig& base) {
  const auto& backend = BackendRegistry::instance().get(backend_id);
  std::vector<MetricConfig> grid;
  for (const auto& site : backend.list_sites()) {
    if (site.kind != AttentionKind::self_attn) continue;
    MetricConfig c = base;
    c.site = site;
    c.site.resolution = base.site.resolution > 0 ? base.site.resolution
                                                 : site.resolution;
    c.metric_kind = base.metric_kind;
    if (backend.is_diffusion()) {
      for (int t = 100; t <= 900; t += 100) {
        c.site.timestep = t;
        grid.push_back(c);
      }
    } else {
      c.site.timestep.reset();
      grid.push_back(c);
    }
  }
  return grid;
}

}  // namespace diffsim
