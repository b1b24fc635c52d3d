#pragma once

// JSON documents exchanged between commands: evaluation reports, score
// matrices, rankings and forecast sidecars.

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaeneu/forecast.hpp"
#include "vaeneu/metrics.hpp"
#include "vaeneu/stats.hpp"

namespace vaeneu {

using json = nlohmann::json;

struct RunScore {
  std::uint64_t seed = 0;
  std::string source;  // checkpoint path or forecaster name
  double mean_crps = 0.0;
  double quantile_crps = 0.0;
  std::vector<double> per_window;
  std::vector<std::vector<double>> per_step;
};

struct CrpsReport {
  std::string dataset;
  std::string model;
  std::size_t horizon = 0;
  std::size_t num_samples = 0;
  std::vector<RunScore> runs;
  double mean_crps = 0.0;
  std::optional<double> cv_percent;
  std::vector<double> per_window;  // averaged over runs
  std::optional<double> reference_crps;
  std::optional<double> delta_percent;

  /// Fills the cross-run summaries from `runs`.
  void summarize() {
    if (runs.empty()) throw DataError("report has no runs");
    std::vector<double> means;
    for (const auto& r : runs) means.push_back(r.mean_crps);
    mean_crps = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    cv_percent.reset();
    if (means.size() >= 2 && mean_crps != 0.0) cv_percent = coefficient_of_variation(means);
    per_window.assign(runs.front().per_window.size(), 0.0);
    for (const auto& r : runs)
      for (std::size_t w = 0; w < per_window.size(); ++w)
        per_window[w] += r.per_window.at(w) / static_cast<double>(runs.size());
    delta_percent.reset();
    if (reference_crps) delta_percent = relative_delta(mean_crps, *reference_crps);
  }
};

inline json to_json(const CrpsReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"source", run.source},
                    {"mean_crps", run.mean_crps},
                    {"quantile_crps", run.quantile_crps},
                    {"per_window", run.per_window},
                    {"per_step", run.per_step}});
  }
  json j{{"dataset", r.dataset},
         {"model", r.model},
         {"horizon", r.horizon},
         {"num_samples", r.num_samples},
         {"runs", runs},
         {"mean_crps", r.mean_crps},
         {"cv_percent", r.cv_percent ? json(*r.cv_percent) : json(nullptr)},
         {"per_window", r.per_window}};
  if (r.reference_crps) {
    j["reference_crps"] = *r.reference_crps;
    j["delta_percent"] = *r.delta_percent;
    j["delta_band"] = to_string(classify_delta(*r.delta_percent));
  }
  return j;
}

inline CrpsReport report_from_json(const json& j) {
  try {
    CrpsReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.horizon = j.value("horizon", std::size_t{0});
    r.num_samples = j.value("num_samples", std::size_t{0});
    for (const auto& run : j.at("runs")) {
      RunScore s;
      s.seed = run.value("seed", std::uint64_t{0});
      s.source = run.value("source", std::string());
      s.mean_crps = run.at("mean_crps").get<double>();
      s.quantile_crps = run.value("quantile_crps", 0.0);
      s.per_window = run.value("per_window", std::vector<double>{});
      r.runs.push_back(std::move(s));
    }
    r.mean_crps = j.at("mean_crps").get<double>();
    if (j.contains("cv_percent") && !j["cv_percent"].is_null()) r.cv_percent = j["cv_percent"];
    r.per_window = j.value("per_window", std::vector<double>{});
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed CRPS report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Score matrices and rankings

inline ScoreMatrix score_matrix_from_json(const json& j) {
  try {
    ScoreMatrix m;
    m.models = j.at("models").get<std::vector<std::string>>();
    m.datasets = j.at("datasets").get<std::vector<std::string>>();
    m.scores = j.at("scores").get<std::vector<std::vector<std::vector<double>>>>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed score matrix: ") + e.what());
  }
}

inline json to_json(const ScoreMatrix& m) {
  return {{"models", m.models}, {"datasets", m.datasets}, {"scores", m.scores}};
}

/// Assembles a matrix from reports; every model must cover every dataset.
inline ScoreMatrix score_matrix_from_reports(const std::vector<CrpsReport>& reports) {
  ScoreMatrix m;
  for (const auto& r : reports) {
    if (std::find(m.models.begin(), m.models.end(), r.model) == m.models.end())
      m.models.push_back(r.model);
    if (std::find(m.datasets.begin(), m.datasets.end(), r.dataset) == m.datasets.end())
      m.datasets.push_back(r.dataset);
  }
  std::sort(m.models.begin(), m.models.end());
  std::sort(m.datasets.begin(), m.datasets.end());
  m.scores.assign(m.models.size(),
                  std::vector<std::vector<double>>(m.datasets.size()));
  for (const auto& r : reports) {
    const auto mi = std::find(m.models.begin(), m.models.end(), r.model) - m.models.begin();
    const auto di = std::find(m.datasets.begin(), m.datasets.end(), r.dataset) - m.datasets.begin();
    auto& cell = m.scores[static_cast<std::size_t>(mi)][static_cast<std::size_t>(di)];
    if (!cell.empty()) {
      throw DataError("two reports for model '" + r.model + "' on dataset '" + r.dataset + "'");
    }
    for (const auto& run : r.runs) cell.push_back(run.mean_crps);
  }
  for (std::size_t mi = 0; mi < m.models.size(); ++mi)
    for (std::size_t di = 0; di < m.datasets.size(); ++di)
      if (m.scores[mi][di].empty()) {
        throw DataError("ragged score matrix: model '" + m.models[mi] + "' has no report for '" +
                        m.datasets[di] + "'");
      }
  return m;
}

struct Ranking {
  std::optional<RankResult> ranks;  // absent when fewer than two runs per cell
  CdBands bands;
  std::vector<std::string> warnings;
};

/// Full ranking pipeline. Per-dataset ranks need at least two runs per
/// cell; with a single run, ranks fall back to ordinary average ranks of
/// the mean scores.
inline Ranking rank_models(const ScoreMatrix& m, double alpha = 0.05) {
  m.validate();
  Ranking out;
  std::size_t min_runs = std::numeric_limits<std::size_t>::max();
  for (const auto& row : m.scores)
    for (const auto& cell : row) min_runs = std::min(min_runs, cell.size());
  bool equal_runs = true;
  for (const auto& row : m.scores)
    for (const auto& cell : row) equal_runs &= cell.size() == m.scores[0][0].size();

  RankResult r;
  if (min_runs >= 2 && equal_runs) {
    r = per_dataset_ranks(m, alpha);
  } else {
    out.warnings.push_back(
        "fewer than two runs per cell: using plain ranks of mean scores instead of paired t-tests");
    r.models = m.models;
    r.datasets = m.datasets;
    r.average.assign(m.num_models(), 0.0);
    const auto means = m.means();
    for (std::size_t d = 0; d < m.num_datasets(); ++d) {
      std::vector<double> col(m.num_models());
      for (std::size_t i = 0; i < m.num_models(); ++i) col[i] = means[i][d];
      r.per_dataset.push_back(average_ranks(col));
      for (std::size_t i = 0; i < m.num_models(); ++i)
        r.average[i] += r.per_dataset.back()[i] / static_cast<double>(m.num_datasets());
    }
    r.order.resize(m.num_models());
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
      if (r.average[a] != r.average[b]) return r.average[a] < r.average[b];
      return r.models[a] < r.models[b];
    });
  }
  out.bands = cd_bands(m, r, alpha);
  if (!out.bands.warning.empty()) out.warnings.push_back(out.bands.warning);
  out.ranks = std::move(r);
  return out;
}

inline json to_json(const Ranking& rk) {
  const RankResult& r = *rk.ranks;
  json avg = json::object();
  for (std::size_t i = 0; i < r.models.size(); ++i) avg[r.models[i]] = r.average[i];
  json per = json::object();
  for (std::size_t d = 0; d < r.datasets.size(); ++d) {
    json row = json::object();
    for (std::size_t i = 0; i < r.models.size(); ++i) row[r.models[i]] = r.per_dataset[d][i];
    per[r.datasets[d]] = row;
  }
  json friedman = nullptr;
  if (rk.bands.friedman) {
    friedman = {{"stat", rk.bands.friedman->statistic}, {"p", rk.bands.friedman->p_value}};
  }
  return {{"avg_ranks", avg},
          {"order", rk.bands.ordered_models},
          {"per_dataset_ranks", per},
          {"friedman", friedman},
          {"bands", rk.bands.bands},
          {"warnings", rk.warnings}};
}

// ---------------------------------------------------------------------------
// Forecast sidecar

inline json forecast_sidecar(const ForecastPaths& p, const std::vector<double>& levels,
                             const std::vector<std::vector<double>>& quantiles) {
  return {{"model", p.model_id},   {"seed", p.seed},
          {"origin", p.origin},    {"horizon", p.horizon},
          {"num_paths", p.num_paths}, {"quantile_levels", levels},
          {"quantiles", quantiles}};
}

inline json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace vaeneu
