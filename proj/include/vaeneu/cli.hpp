#pragma once

// Command-line front end. `run` is the whole program minus process setup,
// so tests can drive it in-process.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
// error.

#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vaeneu/config.hpp"
#include "vaeneu/reports.hpp"
#include "vaeneu/train.hpp"

namespace vaeneu::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kAblationHeader = "sample_size,mean_crps,cv_percent,ms_per_step";

/// "out/model.ckpt", run 2 -> "out/model.run2.ckpt" (runs count from 1).
inline std::string run_path(const std::string& path, std::size_t run) {
  const std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path() / p.stem();
  out += ".run" + std::to_string(run) + p.extension().string();
  return out.string();
}

inline std::string fmt(double v) { return detail::format_double(v); }

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  std::string kind = "mackey-glass";
  std::size_t length = 20000;
  std::string out;
};

inline int cmd_generate(const GenerateOptions& o, std::ostream& out) {
  if (o.kind != "mackey-glass") throw ConfigError("unknown series kind '" + o.kind + "'");
  if (o.length == 0) throw ConfigError("--length must be positive");
  const TimeSeries ts = mackey_glass_generate(o.length);
  write_file_atomic(o.out, to_csv(ts));
  out << "wrote " << ts.size() << " values to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string config;
  std::string checkpoint = "model.ckpt";
  std::string log = "train_log.csv";
};

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o.config);
  const SplitResult split = prepare_split(cfg);
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.run_seed(r);
    TrainResult res = train(cfg.model_config(), split, tc);
    res.best.horizon = cfg.horizon;
    const std::string ckpt = run_path(o.checkpoint, r + 1);
    const std::string log = run_path(o.log, r + 1);
    save_checkpoint(res.best, ckpt);
    write_file_atomic(log, train_log_csv(res.log, cfg.log_timing));
    out << "run " << r + 1 << " seed " << tc.seed << ": best validation CRPS "
        << fmt(res.best.best_validation_crps) << " at step " << res.best.step << " of "
        << res.steps_run << (res.stopped_early ? " (early stop)" : "") << " -> " << ckpt << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string config;
  std::vector<std::string> checkpoints;
  std::string baseline;  // oracle | climatology | persistence
  std::string model_name;
  std::optional<double> reference;
  std::string out = "report.json";
};

inline CrpsReport evaluate_report(const ExperimentConfig& cfg, const SplitResult& split,
                                  const std::string& dataset_name,
                                  const std::vector<std::string>& checkpoints,
                                  const std::string& baseline, std::ostream& out) {
  CrpsReport report;
  report.dataset = dataset_name;
  report.horizon = cfg.horizon;
  report.num_samples = cfg.num_samples;
  const std::size_t runs = checkpoints.empty() ? cfg.runs : checkpoints.size();
  for (std::size_t r = 0; r < runs; ++r) {
    RunScore score;
    score.seed = cfg.run_seed(r);
    std::optional<TrainedModel> tm;
    Forecaster f;
    if (!checkpoints.empty()) {
      const Checkpoint c = load_checkpoint(checkpoints[r]);
      if (c.model.history_size != cfg.history_size) {
        throw ConfigError("checkpoint '" + checkpoints[r] + "' has history size " +
                          std::to_string(c.model.history_size) +
                          " but model.history_size is " + std::to_string(cfg.history_size));
      }
      tm = TrainedModel::from_checkpoint(c);
      f = model_forecaster(*tm);
      score.source = checkpoints[r];
      if (report.model.empty()) report.model = tm->id;
    } else if (baseline == "oracle") {
      f = oracle_forecaster();
    } else if (baseline == "climatology") {
      f = climatology_forecaster(split.train_values);
    } else if (baseline == "persistence") {
      f = persistence_forecaster();
    } else {
      throw ConfigError("give --checkpoint files or --baseline oracle|climatology|persistence");
    }
    if (checkpoints.empty()) {
      score.source = baseline;
      report.model = baseline;
    }
    const WindowEvaluation ev = evaluate_windows(f, split.test, cfg.horizon, cfg.num_samples,
                                                 score.seed, cfg.quantile_levels);
    score.mean_crps = ev.mean_crps;
    score.quantile_crps = ev.quantile_crps.value_or(0.0);
    score.per_window = ev.per_window;
    score.per_step = ev.per_step;
    out << "run " << r + 1 << " (" << score.source << "): CRPS " << fmt(score.mean_crps) << "\n";
    report.runs.push_back(std::move(score));
  }
  return report;
}

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o.config);
  if (!o.checkpoints.empty() && !o.baseline.empty()) {
    throw ConfigError("--checkpoint and --baseline are mutually exclusive");
  }
  const TimeSeries ts = load_dataset(cfg);
  const SplitResult split = split_and_window(ts, cfg.history_size, cfg.horizon, cfg.num_windows);
  CrpsReport report = evaluate_report(cfg, split, ts.name, o.checkpoints, o.baseline, out);
  if (!o.model_name.empty()) report.model = o.model_name;
  report.reference_crps = o.reference;
  report.summarize();
  write_file_atomic(o.out, to_json(report).dump(2) + "\n");
  out << "mean CRPS " << fmt(report.mean_crps);
  if (report.cv_percent) out << ", CV " << fmt(*report.cv_percent) << "%";
  if (report.delta_percent) out << ", delta " << fmt(*report.delta_percent) << "%";
  out << " -> " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// rank

struct RankOptions {
  std::string reports_dir;
  std::string matrix;
  double alpha = 0.05;
  std::string out = "ranking.json";
};

inline int cmd_rank(const RankOptions& o, std::ostream& out, std::ostream& err) {
  ScoreMatrix m;
  if (!o.matrix.empty() == !o.reports_dir.empty()) {
    throw ConfigError("give exactly one of --reports and --matrix");
  }
  if (!o.matrix.empty()) {
    m = score_matrix_from_json(read_json_file(o.matrix));
  } else {
    if (!std::filesystem::is_directory(o.reports_dir)) {
      throw DataError("'" + o.reports_dir + "' is not a directory");
    }
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(o.reports_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<CrpsReport> reports;
    for (const auto& f : files) reports.push_back(report_from_json(read_json_file(f)));
    if (reports.empty()) throw DataError("no reports found in '" + o.reports_dir + "'");
    m = score_matrix_from_reports(reports);
  }
  const Ranking rk = rank_models(m, o.alpha);
  for (const auto& w : rk.warnings) err << "warning: " << w << "\n";
  write_file_atomic(o.out, to_json(rk).dump(2) + "\n");
  for (std::size_t i = 0; i < rk.bands.ordered_models.size(); ++i) {
    out << std::setw(3) << i + 1 << "  " << rk.bands.ordered_models[i] << "  "
        << fmt(rk.bands.ordered_ranks[i]) << "\n";
  }
  out << rk.bands.bands.size() << " band(s) -> " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOptions {
  std::string config;
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16, 32, 64, 128};
  std::string out = "ablation.csv";
};

struct AblationRow {
  std::size_t sample_size = 0;
  std::vector<double> crps;  // per run
  double mean_crps = 0.0;
  std::optional<double> cv_percent;
  double ms_per_step = 0.0;
};

inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg,
                                             const std::vector<std::size_t>& sizes,
                                             std::ostream& out) {
  const SplitResult split = prepare_split(cfg);
  std::vector<AblationRow> rows;
  for (std::size_t S : sizes) {
    if (S == 0) throw ConfigError("sample sizes must be positive");
    AblationRow row;
    row.sample_size = S;
    double ms = 0.0;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      ModelConfig mc = cfg.model_config();
      mc.sample_size = S;
      TrainConfig tc = cfg.train;
      tc.seed = cfg.run_seed(r);
      const TrainResult res = train(mc, split, tc);
      const TrainedModel tm = TrainedModel::from_checkpoint(res.best);
      const WindowEvaluation ev = evaluate_windows(model_forecaster(tm), split.test, cfg.horizon,
                                                   cfg.num_samples, tc.seed);
      row.crps.push_back(ev.mean_crps);
      ms += res.mean_ms_per_step;
      out << "S=" << S << " run " << r + 1 << ": CRPS " << fmt(ev.mean_crps) << ", "
          << fmt(res.mean_ms_per_step) << " ms/step\n";
    }
    row.mean_crps = std::accumulate(row.crps.begin(), row.crps.end(), 0.0) /
                    static_cast<double>(row.crps.size());
    if (row.crps.size() >= 2 && row.mean_crps != 0.0) {
      row.cv_percent = coefficient_of_variation(row.crps);
    }
    row.ms_per_step = ms / static_cast<double>(cfg.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string csv = std::string(kAblationHeader) + "\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.sample_size) + ',' + fmt(r.mean_crps) + ',' +
           (r.cv_percent ? fmt(*r.cv_percent) : std::string()) + ',' + fmt(r.ms_per_step) + '\n';
  }
  return csv;
}

inline int cmd_ablate(const AblateOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o.config);
  if (o.sizes.empty()) throw ConfigError("--sizes must list at least one sample size");
  const auto rows = run_ablation(cfg, o.sizes, out);
  write_file_atomic(o.out, ablation_csv(rows));
  out << "wrote " << rows.size() << " rows to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// forecast

struct ForecastOptions {
  std::string checkpoint;
  std::string input;
  std::size_t horizon = 0;  // 0: the checkpoint's horizon
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  std::size_t quantiles = 99;
  std::string out = "forecast.csv";
};

inline int cmd_forecast(const ForecastOptions& o, std::ostream& out) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  const TrainedModel tm = TrainedModel::from_checkpoint(c);
  const TimeSeries ts = load_csv(o.input);
  if (ts.missing_count() > 0) throw DataError("input series has missing values");
  const std::size_t hws = tm.model.history_size();
  if (ts.size() < hws) {
    throw DataError("input has " + std::to_string(ts.size()) + " values; the model needs " +
                    std::to_string(hws));
  }
  const std::size_t h = o.horizon ? o.horizon : c.horizon;
  if (h == 0) throw ConfigError("--horizon must be positive");
  const std::span<const double> history(ts.values.data() + ts.size() - hws, hws);
  ForecastPaths p = forecast_paths(tm, history, h, o.samples, o.seed);
  p.origin = ts.size();
  const auto levels = quantile_levels(o.quantiles);
  write_file_atomic(o.out, paths_to_csv(p));
  write_file_atomic(o.out + ".json",
                    forecast_sidecar(p, levels, summarize_quantiles(p, levels)).dump(2) + "\n");
  out << "wrote " << p.num_paths << " paths of " << h << " steps to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Probabilistic time series forecasting with a conditional VAE", "vaeneu"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic series as CSV");
  g->add_option("--kind", gen.kind, "Series kind")->check(CLI::IsMember({"mackey-glass"}));
  g->add_option("--length", gen.length, "Number of values")->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output CSV")->required();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train one model per configured run");
  t->add_option("--config", tr.config, "Experiment config")->required();
  t->add_option("--checkpoint", tr.checkpoint, "Checkpoint path; run index is inserted");
  t->add_option("--log", tr.log, "Training log CSV; run index is inserted");

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints or baselines on the test windows");
  e->add_option("--config", ev.config, "Experiment config")->required();
  e->add_option("--checkpoint", ev.checkpoints, "Checkpoint, one per run");
  e->add_option("--baseline", ev.baseline, "Reference forecaster instead of checkpoints")
      ->check(CLI::IsMember({"oracle", "climatology", "persistence"}));
  e->add_option("--model-name", ev.model_name, "Model name written to the report");
  e->add_option("--reference", ev.reference, "Best CRPS on this dataset, for the delta score")
      ->check(CLI::PositiveNumber);
  e->add_option("--out", ev.out, "Report JSON");

  RankOptions rk;
  auto* r = app.add_subcommand("rank", "Rank models from CRPS reports");
  r->add_option("--reports", rk.reports_dir, "Directory of report JSON files");
  r->add_option("--matrix", rk.matrix, "Score matrix JSON");
  r->add_option("--alpha", rk.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
  r->add_option("--out", rk.out, "Ranking JSON");

  AblateOptions ab;
  auto* a = app.add_subcommand("ablate", "Sweep the training sample size");
  a->add_option("--config", ab.config, "Experiment config")->required();
  a->add_option("--sizes", ab.sizes, "Sample sizes")->delimiter(',');
  a->add_option("--out", ab.out, "Output CSV");

  ForecastOptions fc;
  auto* f = app.add_subcommand("forecast", "Sample future paths after the end of a series");
  f->add_option("--checkpoint", fc.checkpoint, "Trained checkpoint")->required();
  f->add_option("--input", fc.input, "Series CSV")->required();
  f->add_option("--horizon", fc.horizon, "Steps ahead (default: the trained horizon)");
  f->add_option("--samples", fc.samples, "Number of paths")->check(CLI::PositiveNumber);
  f->add_option("--seed", fc.seed, "Random seed");
  f->add_option("--quantiles", fc.quantiles, "Quantile levels in the sidecar")
      ->check(CLI::PositiveNumber);
  f->add_option("--out", fc.out, "Paths CSV; the sidecar gets a .json suffix");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (r->parsed()) return cmd_rank(rk, out, err);
    if (a->parsed()) return cmd_ablate(ab, out);
    if (f->parsed()) return cmd_forecast(fc, out);
  } catch (const ConfigError& ce) {
    err << "error: " << ce.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace vaeneu::cli
