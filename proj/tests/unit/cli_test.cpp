#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vaeneu/cli.hpp"

namespace vaeneu {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("vaeneu_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  std::string small_config(const std::string& extra = "") const {
    return write("exp.cfg",
                 "# small run\n"
                 "dataset = mackey-glass\n"
                 "dataset.length = 600\n"
                 "model.backbone = tcn\n"
                 "model.history_size = 16\n"
                 "model.horizon = 8\n"
                 "model.sample_size = 4\n"
                 "train.max_steps = 40\n"
                 "train.eval_every = 20\n"
                 "train.patience_steps = 40\n"
                 "train.batch_size = 8\n"
                 "train.validation_samples = 10\n"
                 "train.seed = 11\n"
                 "eval.num_samples = 50\n" +
                     extra);
  }

  int run(const std::vector<std::string>& args) {
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config("model.backbone = rnn\ntrain.learning_rate = 0.01 # x\n");
  EXPECT_EQ(c.backbone, BackboneKind::rnn);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.history_size, 120u);
  EXPECT_EQ(c.horizon, 60u);
  EXPECT_EQ(c.train.max_steps, 100000u);
  EXPECT_EQ(c.train.patience_steps, 5000u);
  EXPECT_EQ(c.num_samples, 1000u);
  EXPECT_EQ(c.quantile_levels, 99u);
  EXPECT_EQ(c.run_seed(2), c.train.seed + 2);
}

TEST(Config, ReportsEveryProblemAtOnce) {
  try {
    parse_config(
        "model.backbone = gru\n"
        "model.history_size = 4\n"
        "bogus.key = 1\n"
        "train.batch_size = -3\n"
        "model.horizon = 5\n"
        "model.horizon = 6\n"
        "no equals sign\n"
        "dataset = missing.csv\n",
        "/nonexistent");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* needle :
         {"model.backbone: expected rnn or tcn", "model.history_size: must be at least 8",
          "unknown key 'bogus.key'", "train.batch_size: expected a non-negative integer",
          "'model.horizon' already set on line 5", "line 7: expected key = value",
          "does not exist"}) {
      EXPECT_NE(msg.find(needle), std::string::npos) << needle << "\n" << msg;
    }
  }
}

TEST(Config, PatienceBelowEvalInterval) {
  EXPECT_THROW(parse_config("train.eval_every = 100\ntrain.patience_steps = 50\n"), ConfigError);
}

TEST(Config, RelativeDatasetResolvedAgainstConfigDir) {
  const auto dir = fs::temp_directory_path() / "vaeneu_cfg_rel";
  fs::create_directories(dir);
  std::ofstream(dir / "series.csv") << "value\n1\n";
  std::ofstream(dir / "exp.cfg") << "dataset = series.csv\n";
  EXPECT_EQ(load_config((dir / "exp.cfg").string()).dataset, (dir / "series.csv").string());
  fs::remove_all(dir);
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"train"}), cli::kExitUsage);
  EXPECT_EQ(run({"train", "--config", small_config(), "--bogus"}), cli::kExitUsage);
  EXPECT_EQ(run({"evaluate", "--config", small_config(), "--baseline", "magic"}), cli::kExitUsage);
  EXPECT_EQ(run({"train", "--config", write("bad.cfg", "model.sample_size = 0\n")}),
            cli::kExitUsage);
  EXPECT_NE(err_.str().find("model.sample_size: must be positive"), std::string::npos);
  EXPECT_EQ(run({"evaluate", "--config", small_config()}), cli::kExitUsage);
}

TEST_F(CliTest, RuntimeErrorsExitTwo) {
  EXPECT_EQ(run({"evaluate", "--config", small_config(), "--checkpoint", path("none.ckpt")}),
            cli::kExitRuntime);
  EXPECT_EQ(run({"forecast", "--checkpoint", path("none.ckpt"), "--input", path("x.csv")}),
            cli::kExitRuntime);
}

TEST_F(CliTest, HelpExitsZero) {
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  EXPECT_NE(out_.str().find("ablate"), std::string::npos);
}

TEST_F(CliTest, GenerateWritesSeries) {
  ASSERT_EQ(run({"generate", "--length", "300", "--out", path("mg.csv")}), cli::kExitOk);
  const TimeSeries ts = load_csv(path("mg.csv"));
  EXPECT_EQ(ts.values, mackey_glass_generate(300).values);
}

TEST_F(CliTest, TrainIsReproducibleAndWritesEveryRun) {
  const std::string cfg = small_config("train.runs = 3\n");
  ASSERT_EQ(run({"train", "--config", cfg, "--checkpoint", path("a/m.ckpt"), "--log",
                 path("a/log.csv")}),
            cli::kExitRuntime)
      << "missing output directory is a runtime error";
  fs::create_directories(path("a"));
  fs::create_directories(path("b"));
  ASSERT_EQ(run({"train", "--config", cfg, "--checkpoint", path("a/m.ckpt"), "--log",
                 path("a/log.csv")}),
            cli::kExitOk)
      << err_.str();
  ASSERT_EQ(run({"train", "--config", cfg, "--checkpoint", path("b/m.ckpt"), "--log",
                 path("b/log.csv")}),
            cli::kExitOk);
  for (int r = 1; r <= 3; ++r) {
    const std::string suffix = ".run" + std::to_string(r);
    EXPECT_EQ(read_file(path("a/m" + suffix + ".ckpt")), read_file(path("b/m" + suffix + ".ckpt")));
    EXPECT_EQ(read_file(path("a/log" + suffix + ".csv")), read_file(path("b/log" + suffix + ".csv")));
  }
  EXPECT_NE(read_file(path("a/m.run1.ckpt")), read_file(path("a/m.run2.ckpt")));
  EXPECT_EQ(load_checkpoint(path("a/m.run1.ckpt")).horizon, 8u);
}

TEST_F(CliTest, EvaluateRankAndForecastEndToEnd) {
  const std::string cfg = small_config("train.runs = 2\n");
  ASSERT_EQ(run({"train", "--config", cfg, "--checkpoint", path("m.ckpt"), "--log", path("l.csv")}),
            cli::kExitOk);
  fs::create_directories(path("reports"));
  ASSERT_EQ(run({"evaluate", "--config", cfg, "--checkpoint", path("m.run1.ckpt"), "--checkpoint",
                 path("m.run2.ckpt"), "--out", path("reports/model.json")}),
            cli::kExitOk)
      << err_.str();
  const json model = read_json_file(path("reports/model.json"));
  EXPECT_EQ(model["model"], "vaeneu-tcn");
  EXPECT_EQ(model["runs"].size(), 2u);
  EXPECT_FALSE(model["cv_percent"].is_null());
  EXPECT_EQ(model["per_window"].size(), 5u);

  for (const char* b : {"climatology", "persistence", "oracle"}) {
    ASSERT_EQ(run({"evaluate", "--config", cfg, "--baseline", b, "--out",
                   path(std::string("reports/") + b + ".json")}),
              cli::kExitOk);
  }
  const json oracle = read_json_file(path("reports/oracle.json"));
  EXPECT_EQ(oracle["mean_crps"].get<double>(), 0.0);
  EXPECT_TRUE(oracle["cv_percent"].is_null());

  ASSERT_EQ(run({"evaluate", "--config", cfg, "--baseline", "climatology", "--reference", "0.05",
                 "--out", path("clim_ref.json")}),
            cli::kExitOk);
  const json ref = read_json_file(path("clim_ref.json"));
  EXPECT_TRUE(ref.contains("delta_band"));

  fs::remove(path("reports/oracle.json"));  // zero scores are valid but uninformative
  ASSERT_EQ(run({"rank", "--reports", path("reports"), "--out", path("rank.json")}), cli::kExitOk)
      << err_.str();
  const json rank = read_json_file(path("rank.json"));
  EXPECT_EQ(rank["avg_ranks"].size(), 3u);
  EXPECT_FALSE(rank["bands"].empty());
  EXPECT_FALSE(rank["warnings"].empty()) << "one dataset cannot run the Friedman test";

  write("input.csv", to_csv(mackey_glass_generate(100)));
  ASSERT_EQ(run({"forecast", "--checkpoint", path("m.run1.ckpt"), "--input", path("input.csv"),
                 "--samples", "30", "--seed", "4", "--quantiles", "9", "--out", path("fc.csv")}),
            cli::kExitOk)
      << err_.str();
  const std::string csv = read_file(path("fc.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 30);
  const json side = read_json_file(path("fc.csv.json"));
  EXPECT_EQ(side["horizon"], 8);
  EXPECT_EQ(side["quantiles"].size(), 8u);
  EXPECT_EQ(side["quantiles"][0].size(), 9u);
  EXPECT_EQ(side["origin"], 100);
}

TEST_F(CliTest, EvaluateRejectsHistoryMismatch) {
  ASSERT_EQ(run({"train", "--config", small_config(), "--checkpoint", path("m.ckpt"), "--log",
                 path("l.csv")}),
            cli::kExitOk);
  const std::string other = write("other.cfg", "dataset.length = 600\nmodel.history_size = 20\n"
                                               "model.horizon = 8\n");
  EXPECT_EQ(run({"evaluate", "--config", other, "--checkpoint", path("m.run1.ckpt")}),
            cli::kExitUsage);
  EXPECT_NE(err_.str().find("history size"), std::string::npos);
}

TEST_F(CliTest, RankFromMatrixFile) {
  ScoreMatrix m;
  m.models = {"p", "q"};
  m.datasets = {"x", "y", "z"};
  m.scores = {{{1, 1.1}, {2, 2.1}, {3, 3.1}}, {{2, 2.2}, {3, 3.3}, {4, 4.1}}};
  write("m.json", to_json(m).dump());
  ASSERT_EQ(run({"rank", "--matrix", path("m.json"), "--out", path("r.json")}), cli::kExitOk);
  const json r = read_json_file(path("r.json"));
  EXPECT_EQ(r["order"][0], "p");
  EXPECT_DOUBLE_EQ(r["per_dataset_ranks"]["x"]["q"].get<double>(), 2.0);
  write("ragged.json", R"({"models":["p","q"],"datasets":["x"],"scores":[[[1]]]})");
  EXPECT_EQ(run({"rank", "--matrix", path("ragged.json")}), cli::kExitRuntime);
}

TEST_F(CliTest, AblationCsv) {
  ASSERT_EQ(run({"ablate", "--config", small_config("train.runs = 2\n"), "--sizes", "1,2", "--out",
                 path("ab.csv")}),
            cli::kExitOk)
      << err_.str();
  const std::string csv = read_file(path("ab.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), cli::kAblationHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.find("\n1,"), csv.find('\n'));
}

TEST(Reports, JsonRoundTripAndRaggedMatrix) {
  CrpsReport r;
  r.dataset = "d";
  r.model = "m";
  r.horizon = 2;
  r.runs = {{1, "a", 1.0, 1.1, {1.0}, {{1.0, 1.0}}}, {2, "b", 3.0, 3.1, {3.0}, {{3.0, 3.0}}}};
  r.summarize();
  EXPECT_DOUBLE_EQ(r.mean_crps, 2.0);
  EXPECT_DOUBLE_EQ(*r.cv_percent, 50.0);
  const CrpsReport back = report_from_json(to_json(r));
  EXPECT_EQ(back.runs.size(), 2u);
  EXPECT_DOUBLE_EQ(*back.cv_percent, 50.0);

  CrpsReport other = r;
  other.model = "n";
  other.dataset = "e";
  EXPECT_THROW(score_matrix_from_reports({r, other}), DataError);
  EXPECT_THROW(score_matrix_from_reports({r, r}), DataError);
  EXPECT_THROW(report_from_json(json{{"dataset", "x"}}), DataError);
}

}  // namespace
}  // namespace vaeneu
