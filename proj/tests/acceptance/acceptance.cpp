// Acceptance runner: one PASS/FAIL line per criterion.
//
//   vaeneu_acceptance [--criterion N] [--workdir DIR]
//
// Exits non-zero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "vaeneu/cli.hpp"
#include "vaeneu/vaeneu.hpp"

namespace fs = std::filesystem;
using namespace vaeneu;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_workdir = "acceptance_work";

// ---------------------------------------------------------------------------

Outcome autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : testing::op_gradient_cases()) {
    const double e = testing::gradient_error(c.fn, c.inputs);
    if (!(e <= worst_op)) {
      worst_op = e;
      worst_name = c.name;
    }
  }
  const double rnn = testing::objective_gradient_error(BackboneKind::rnn);
  const double tcn = testing::objective_gradient_error(BackboneKind::tcn);
  const double secs = seconds_since(t0);
  const bool ok = worst_op < 1e-4 && rnn < 1e-3 && tcn < 1e-3 && secs < 60.0;
  return {ok, "worst op error " + num(worst_op) + " (" + worst_name + ", limit 1e-4); objective " +
                  "error rnn " + num(rnn) + ", tcn " + num(tcn) + " (limit 1e-3); " + num(secs, 3) +
                  " s"};
}

Outcome crps_oracle() {
  RngStream rng(2, 0xC);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + rng.uniform_index(100);
    std::vector<double> x(n);
    const double spread = std::exp(3.0 * rng.normal());
    for (double& v : x) v = spread * rng.normal();
    const double y = spread * 1.5 * rng.normal();
    worst = std::max(worst, std::abs(crps_samples(x, y) - testing::crps_by_quadrature(x, y)));
  }
  const double two = crps_samples({0.0, 1.0}, 0.0);
  return {worst <= 1e-9 && two == 0.25,
          "max |energy form - quadrature| over 1000 cases " + num(worst) + " (limit 1e-9); " +
              "{0, 1} vs 0 gives " + num(two, 17)};
}

Outcome gaussian() {
  RngStream rng(3, 0xC);
  std::vector<double> x(10000);
  for (double& v : x) v = rng.normal();
  const double closed = testing::gaussian_crps(0.0, 1.0, 0.0);
  const double sampled = crps_samples(x, 0.0);
  std::sort(x.begin(), x.end());
  std::vector<double> q;
  for (double a : quantile_levels(99)) q.push_back(empirical_quantile(x, a));
  const double quantile = crps_quantiles(q, 0.0);
  const double rel = std::abs(quantile - sampled) / sampled;
  return {std::abs(sampled - 0.2337) <= 0.01 && std::abs(closed - 0.2337) < 5e-5 && rel <= 0.05,
          "sample CRPS " + num(sampled) + " vs closed form " + num(closed) +
              " (target 0.2337 +- 0.01); quantile CRPS " + num(quantile) + ", relative gap " +
              num(100 * rel, 3) + "% (limit 5%)"};
}

Outcome loss_reduction() {
  RngStream rng(4, 0xC);
  bool mae_exact = true;
  const Tensor f = testing::random_tensor(Shape{200, 1}, rng, -5, 5);
  const Tensor y = testing::random_tensor(Shape{200, 1}, rng, -5, 5);
  const Tensor l = crps_training_loss(f, y, std::vector<std::size_t>(200, 0));
  for (std::size_t b = 0; b < 200; ++b) mae_exact &= l[b] == std::abs(f[b] - y[b]);
  double worst = 0.0;
  for (std::size_t S = 2; S <= 32; ++S) {
    for (int rep = 0; rep < 10; ++rep) {
      const Tensor fs = testing::random_tensor(Shape{1, S}, rng, -3, 3);
      const double obs = 6.0 * rng.uniform() - 3.0;
      double avg = 0.0;
      for (std::size_t k = 1; k < S; ++k)
        avg += crps_training_loss(fs, Tensor::matrix(1, 1, {obs}), {k})[0];
      avg /= static_cast<double>(S - 1);
      const std::vector<double> v(fs.values().begin(), fs.values().end());
      worst = std::max(worst, std::abs(avg - testing::pairwise_training_crps(v, obs)));
    }
  }
  return {mae_exact && worst <= 1e-12,
          std::string("S = 1 loss equals |f - y| exactly: ") + (mae_exact ? "yes" : "no") +
              "; max |rotation average - pairwise estimator| for S = 2..32: " + num(worst) +
              " (limit 1e-12)"};
}

// Desk-scale Mackey-Glass setup shared by criteria 5 and 6.
ExperimentConfig mackey_glass_config(BackboneKind kind) {
  ExperimentConfig c;
  c.dataset = "mackey-glass";
  c.dataset_length = 20000;
  c.backbone = kind;
  c.history_size = 120;
  c.horizon = 60;
  c.sample_size = 8;
  c.train.max_steps = kind == BackboneKind::tcn ? 3000 : 2000;
  c.train.patience_steps = 5000;
  c.train.eval_every = 100;
  c.num_samples = 1000;
  c.num_windows = 5;
  return c;
}

Outcome desk_scale() {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  bool ok = true;
  std::ostringstream detail;
  const SplitResult split = prepare_split(mackey_glass_config(BackboneKind::tcn));
  const double clim = evaluate_windows(climatology_forecaster(split.train_values), split.test, 60,
                                       1000, 77).mean_crps;
  const double pers = evaluate_windows(persistence_forecaster(), split.test, 60, 1000, 77).mean_crps;
  detail << "climatology " << num(clim) << ", persistence " << num(pers) << ";";
  for (BackboneKind kind : {BackboneKind::tcn, BackboneKind::rnn}) {
    const ExperimentConfig cfg = mackey_glass_config(kind);
    const auto t0 = std::chrono::steady_clock::now();
    detail << " " << to_string(kind) << " (" << cfg.train.max_steps << " steps):";
    for (std::uint64_t seed : seeds) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      const TrainResult res = train(cfg.model_config(), split, tc);
      const TrainedModel tm = TrainedModel::from_checkpoint(res.best);
      const double crps =
          evaluate_windows(model_forecaster(tm), split.test, 60, 1000, seed).mean_crps;
      const bool seed_ok = crps <= 0.7 * clim && crps < pers;
      ok &= seed_ok;
      detail << " seed " << seed << " " << num(crps) << (seed_ok ? "" : " [miss]");
    }
    const double minutes = seconds_since(t0) / 60.0;
    ok &= minutes <= 30.0;
    detail << ", " << num(minutes, 3) << " min;";
  }
  detail << " needs every run <= 0.7 x climatology and < persistence";
  return {ok, detail.str()};
}

Outcome ablation_trend() {
  fs::create_directories(g_workdir);
  const fs::path cfg_path = g_workdir / "ablation.cfg";
  std::ofstream(cfg_path) << "dataset = mackey-glass\n"
                             "dataset.length = 20000\n"
                             "model.backbone = tcn\n"
                             "model.history_size = 120\n"
                             "model.horizon = 60\n"
                             "train.max_steps = 3000\n"
                             "train.seed = 1\n"
                             "train.runs = 3\n"
                             "eval.num_samples = 1000\n";
  const fs::path csv_path = g_workdir / "ablation.csv";
  std::ostringstream out, err;
  const int code = cli::run({"ablate", "--config", cfg_path.string(), "--sizes", "1,8", "--out",
                             csv_path.string()},
                            out, err);
  if (code != cli::kExitOk) return {false, "ablate exited with " + std::to_string(code) + ": " + err.str()};
  std::ifstream in(csv_path);
  std::string header, line;
  std::getline(in, header);
  std::map<std::size_t, double> mean;
  std::map<std::size_t, std::string> rows;
  while (std::getline(in, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const std::size_t S = std::stoul(line.substr(0, c1));
    mean[S] = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    rows[S] = line;
  }
  const bool ok = header == cli::kAblationHeader && mean.count(1) && mean.count(8) &&
                  mean[8] < mean[1];
  return {ok, "mean test CRPS over 3 seeds: S=1 " + num(mean[1]) + ", S=8 " + num(mean[8]) +
                  " (needs S=8 < S=1); csv " + csv_path.string()};
}

Outcome statistics() {
  RngStream rng(7, 0xC);
  double worst_p = 0.0;
  for (std::size_t m = 1; m <= 12; ++m) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> a(m), b(m);
      for (std::size_t i = 0; i < m; ++i) {
        a[i] = std::round(8.0 * rng.normal()) / 2.0;
        b[i] = std::round(8.0 * rng.normal() + rep % 4) / 2.0;
      }
      std::vector<double> d;
      for (std::size_t i = 0; i < m; ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
      double oracle_p = 1.0;
      if (!d.empty()) {
        const auto ranks = testing::magnitude_ranks(d);
        double wp = 0, wm = 0;
        for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? wp : wm) += ranks[i];
        oracle_p = testing::wilcoxon_p_enumerated(ranks, std::min(wp, wm));
      }
      worst_p = std::max(worst_p, std::abs(wilcoxon_signed_rank(a, b).p_value - oracle_p));
    }
  }
  std::vector<std::vector<double>> s(3, std::vector<double>(10));
  for (std::size_t d = 0; d < 10; ++d)
    for (std::size_t k = 0; k < 3; ++k) s[k][d] = (1.0 + static_cast<double>(k)) * (1.0 + d);
  const double friedman = friedman_test(s).statistic;
  const std::vector<double> zero{0, 0, 0}, inc{1, 2, 3};
  const PairedTTestResult t = paired_t_test_one_sided(zero, inc);
  const double t_oracle = testing::student_t_sf_numeric(t.t, 2.0);
  const ScoreMatrix m = testing::two_cluster_matrix(1);
  const CdBands bands = cd_bands(m, per_dataset_ranks(m));
  bool clusters = bands.bands.size() == 2;
  for (const auto& band : bands.bands)
    for (const auto& name : band) clusters &= name[0] == band.front()[0];
  const bool ok = worst_p <= 1e-12 && std::abs(friedman - 20.0) < 1e-12 &&
                  std::abs(t.p_value - t_oracle) <= 1e-4 && std::abs(t.p_value - 0.0371) <= 1e-4 &&
                  clusters;
  return {ok, "Wilcoxon max |p - enumeration| (m <= 12) " + num(worst_p) + "; Friedman " +
                  num(friedman, 10) + "; t-test p " + num(t.p_value, 6) + " vs oracle " +
                  num(t_oracle, 6) + "; two-cluster matrix gives " +
                  std::to_string(bands.bands.size()) + " band(s)" +
                  (clusters ? " matching the clusters" : "")};
}

Outcome reproducibility() {
  const fs::path dir = g_workdir / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  const fs::path cfg = dir / "train.cfg";
  std::ofstream(cfg) << "dataset = mackey-glass\n"
                        "dataset.length = 3000\n"
                        "model.backbone = tcn\n"
                        "model.history_size = 48\n"
                        "model.horizon = 24\n"
                        "train.max_steps = 300\n"
                        "train.seed = 5\n"
                        "train.runs = 2\n";
  for (const char* sub : {"a", "b"}) {
    std::ostringstream out, err;
    const int code = cli::run({"train", "--config", cfg.string(), "--checkpoint",
                               (dir / sub / "m.ckpt").string(), "--log",
                               (dir / sub / "log.csv").string()},
                              out, err);
    if (code != cli::kExitOk) return {false, "train exited with " + std::to_string(code) + ": " + err.str()};
  }
  bool same = true;
  for (const char* f : {"m.run1.ckpt", "m.run2.ckpt", "log.run1.csv", "log.run2.csv"})
    same &= read_file((dir / "a" / f).string()) == read_file((dir / "b" / f).string());
  const std::string bytes = read_file((dir / "a" / "m.run1.ckpt").string());
  const Checkpoint c = deserialize_checkpoint(bytes);
  save_checkpoint(c, (dir / "resaved.ckpt").string());
  const bool round_trip =
      c == deserialize_checkpoint(serialize_checkpoint(c)) &&
      read_file((dir / "resaved.ckpt").string()) == bytes;
  return {same && round_trip, std::string("two executions byte-identical (2 runs, logs and ") +
                                  "checkpoints): " + (same ? "yes" : "no") +
                                  "; load/save round trip bit-exact: " + (round_trip ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string workdir = g_workdir.string();
  app.add_option("--criterion", selected, "Criterion number(s), default all")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for generated files");
  CLI11_PARSE(app, argc, argv);
  g_workdir = workdir;

  const std::vector<Criterion> all{
      {1, "autodiff gradients", autodiff},
      {2, "CRPS quadrature oracle", crps_oracle},
      {3, "Gaussian CRPS cross-check", gaussian},
      {4, "training loss reduction", loss_reduction},
      {5, "desk-scale Mackey-Glass forecasting", desk_scale},
      {6, "sample-size ablation trend", ablation_trend},
      {7, "statistics suite", statistics},
      {8, "reproducibility", reproducibility},
  };
  bool all_pass = true;
  for (const Criterion& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end())
      continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all_pass &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name
              << "): " << o.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
