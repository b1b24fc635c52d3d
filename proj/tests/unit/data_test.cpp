#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vaeneu/data.hpp"

namespace vaeneu {
namespace {

TEST(Csv, SingleColumnWithHeader) {
  const TimeSeries ts = parse_csv("value\n1.5\n-2\n\n3e1\n");
  EXPECT_EQ(ts.values, (std::vector<double>{1.5, -2.0, 30.0}));
  EXPECT_TRUE(ts.timestamps.empty());
}

TEST(Csv, TimestampColumnAndMissingTokens) {
  const TimeSeries ts = parse_csv("t,v\r\n2020-01-01,1\r\n2020-01-02,NA\r\n2020-01-03,\r\n2020-01-04,4\r\n");
  ASSERT_EQ(ts.size(), 4u);
  EXPECT_EQ(ts.timestamps[1], "2020-01-02");
  EXPECT_EQ(ts.missing_count(), 2u);
  EXPECT_EQ(ts.values[3], 4.0);
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse_csv("a,b,c\n1,2,3\n"), DataError);
  EXPECT_THROW(parse_csv("value\n1\nabc\n"), DataError);
  EXPECT_THROW(parse_csv("1\n2,3\n"), DataError);
  EXPECT_THROW(parse_csv("value\n"), DataError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), DataError);
}

TEST(Csv, RoundTripIsExact) {
  TimeSeries ts;
  ts.values = {0.1, 1.0 / 3.0, -1e-300, 12345.678901234567};
  ts.timestamps = {"a", "b", "c", "d"};
  const TimeSeries back = parse_csv(to_csv(ts));
  EXPECT_EQ(back.values, ts.values);
  EXPECT_EQ(back.timestamps, ts.timestamps);
}

TEST(Csv, LoadUsesFileStemAsName) {
  const auto dir = std::filesystem::temp_directory_path() / "vaeneu_data_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "sunspots.csv").string();
  std::ofstream(path) << "value\n1\n2\n";
  EXPECT_EQ(load_csv(path).name, "sunspots");
  std::filesystem::remove_all(dir);
}

TEST(Impute, AdjacentMean) {
  TimeSeries ts;
  ts.values = {kMissing, 2, kMissing, kMissing, 6, kMissing};
  const TimeSeries out = impute_adjacent_mean(ts);
  EXPECT_EQ(out.values, (std::vector<double>{2, 2, 4, 4, 6, 6}));
  ts.values = {kMissing, kMissing};
  EXPECT_THROW(impute_adjacent_mean(ts), DataError);
}

TEST(Impute, LastObservationCarriedForward) {
  TimeSeries ts;
  ts.values = {1, kMissing, kMissing, 5, kMissing};
  EXPECT_EQ(impute_locf(ts).values, (std::vector<double>{1, 1, 1, 5, 5}));
  ts.values = {kMissing, 1};
  EXPECT_THROW(impute_locf(ts), DataError);
}

TEST(Resample, BlockMeansDropPartialTail) {
  TimeSeries ts;
  ts.values = {1, 2, 3, 4, 5, 6, 7};
  ts.timestamps = {"a", "b", "c", "d", "e", "f", "g"};
  const TimeSeries out = aggregate_resample(ts, 3);
  EXPECT_EQ(out.values, (std::vector<double>{2, 5}));
  EXPECT_EQ(out.timestamps, (std::vector<std::string>{"a", "d"}));
  EXPECT_EQ(aggregate_resample(ts, 1).values, ts.values);
  EXPECT_THROW(aggregate_resample(ts, 0), DataError);
}

TEST(Normalization, TrainRegionStatistics) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = NormalizationStats::fit(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(s.denormalize(s.normalize(3.7)), 3.7);
  const std::vector<double> flat{2, 2};
  EXPECT_EQ(NormalizationStats::fit(flat).std, 1.0);
}

TEST(Split, LayoutAndWindows) {
  TimeSeries ts;
  const std::size_t hws = 4, h = 3, n = 40;
  for (std::size_t i = 0; i < n; ++i) ts.values.push_back(static_cast<double>(i));
  const SplitResult r = split_and_window(ts, hws, h, 5);
  EXPECT_EQ(r.spec.test_begin, n - 5 * h);
  EXPECT_EQ(r.spec.train_end, n - 6 * h);
  ASSERT_EQ(r.test.size(), 5u);
  for (std::size_t w = 0; w < 5; ++w) {
    EXPECT_EQ(r.test[w].origin, n - 5 * h + w * h);
    EXPECT_EQ(r.test[w].history.back(), static_cast<double>(r.test[w].origin - 1));
    EXPECT_EQ(r.test[w].truth.front(), static_cast<double>(r.test[w].origin));
    EXPECT_EQ(r.test[w].truth.size(), h);
  }
  EXPECT_EQ(r.train.size(), r.spec.train_end - hws);
  EXPECT_EQ(r.validation.size(), h);
  // Statistics use the training region only.
  const double mu = (static_cast<double>(r.spec.train_end) - 1.0) / 2.0;
  EXPECT_DOUBLE_EQ(r.stats.mean, mu);
  // A window's history ends right before its target.
  const std::size_t i = 3;
  EXPECT_DOUBLE_EQ(r.stats.denormalize(r.train.target(i)), static_cast<double>(hws + i));
  EXPECT_DOUBLE_EQ(r.stats.denormalize(r.train.history(i).back()),
                   static_cast<double>(hws + i - 1));
  // Validation targets follow the training region and see its tail as history.
  EXPECT_DOUBLE_EQ(r.stats.denormalize(r.validation.target(0)),
                   static_cast<double>(r.spec.train_end));
}

TEST(Split, Errors) {
  TimeSeries ts;
  ts.values.assign(required_length(8, 5) - 1, 1.0);
  EXPECT_THROW(split_and_window(ts, 8, 5), DataError);
  ts.values.push_back(1.0);
  EXPECT_NO_THROW(split_and_window(ts, 8, 5));
  ts.values[3] = kMissing;
  EXPECT_THROW(split_and_window(ts, 8, 5), DataError);
}

TEST(MackeyGlass, DeterministicAndBounded) {
  const TimeSeries a = mackey_glass_generate(3000);
  const TimeSeries b = mackey_glass_generate(3000);
  EXPECT_EQ(a.values, b.values);
  ASSERT_EQ(a.size(), 3000u);
  double lo = 1e9, hi = -1e9, mean = 0.0;
  for (double v : a.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    mean += v / 3000.0;
  }
  // The tau = 17 attractor stays roughly within [0.2, 1.4] around 0.9.
  EXPECT_GT(lo, 0.15);
  EXPECT_LT(hi, 1.45);
  EXPECT_NEAR(mean, 0.9, 0.1);
  EXPECT_GT(hi - lo, 0.8) << "chaotic regime, not a fixed point";
}

TEST(MackeyGlass, HalvingTheStepBarelyMovesTheSeries) {
  MackeyGlassParams fine;
  fine.dt = 0.05;
  fine.burn_in = 2000;  // same burn-in time
  const TimeSeries a = mackey_glass_generate(200);
  const TimeSeries b = mackey_glass_generate(200, fine);
  double worst = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const double d = a.values[i] - b.values[i];
    worst = std::max(worst, std::abs(d));
    if (i < 100) sq += d * d / 100.0;
  }
  EXPECT_LT(worst, 1e-3);
  EXPECT_LT(std::sqrt(sq), 1e-4);
}

TEST(MackeyGlass, FineStepReferenceStaysInsideZeroTwo) {
  MackeyGlassParams fine;
  fine.dt = 0.01;
  fine.burn_in = 10000;
  for (double v : mackey_glass_generate(2000, fine).values) {
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 2.0);
  }
}

TEST(MackeyGlass, RejectsBadParameters) {
  MackeyGlassParams p;
  p.dt = 0.3;
  EXPECT_THROW(mackey_glass_generate(10, p), DataError);
  EXPECT_THROW(mackey_glass_generate(0), DataError);
}

}  // namespace
}  // namespace vaeneu
