#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaeneu/forecast.hpp"

namespace vaeneu {

/// Sorted finite sample standing in for a predictive CDF.
class EmpiricalDistribution {
 public:
  explicit EmpiricalDistribution(std::vector<double> samples) : sorted_(std::move(samples)) {
    if (sorted_.empty()) throw DomainError("empirical distribution needs at least one sample");
    for (double v : sorted_) {
      if (!std::isfinite(v)) throw DomainError("empirical distribution sample is not finite");
    }
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::span<const double> sorted() const { return sorted_; }
  std::size_t size() const { return sorted_.size(); }

 private:
  std::vector<double> sorted_;
};

/// Exact CRPS of the empirical CDF against `obs`:
///   (1/n) sum_i |x_i - y| - 1/(2 n^2) sum_i sum_j |x_i - x_j|
/// The pairwise term uses sum_{i<j} (x_(j) - x_(i)) = sum_i (2i - n - 1) x_(i)
/// over the sorted sample (1-based i), so the cost is one pass. The weights
/// sum to zero, so x_(1) is subtracted first; a constant sample then has
/// exactly zero spread.
inline double crps_samples(const EmpiricalDistribution& dist, double obs) {
  const auto x = dist.sorted();
  const double n = static_cast<double>(x.size());
  double accuracy = 0.0;
  double spread = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    accuracy += std::abs(x[i] - obs);
    spread += (2.0 * static_cast<double>(i + 1) - n - 1.0) * (x[i] - x[0]);
  }
  return std::max(0.0, accuracy / n - spread / (n * n));
}

inline double crps_samples(std::vector<double> samples, double obs) {
  return crps_samples(EmpiricalDistribution(std::move(samples)), obs);
}

/// Quantile (pinball) loss: alpha (x - q) if x >= q, else (1 - alpha)(q - x).
inline double pinball_loss(double q, double obs, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("pinball level must lie in (0, 1)");
  return obs >= q ? alpha * (obs - q) : (1.0 - alpha) * (q - obs);
}

/// CRPS from N quantiles at levels i / (N + 1):
///   (1 / (N + 1)) sum_i 2 pinball(q_i, obs, alpha_i)
inline double crps_quantiles(std::span<const double> quantiles, double obs,
                             std::size_t expected_count = 99) {
  if (quantiles.size() != expected_count) {
    throw DomainError("expected " + std::to_string(expected_count) + " quantiles, got " +
                      std::to_string(quantiles.size()));
  }
  const double N1 = static_cast<double>(quantiles.size() + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (i > 0 && quantiles[i] < quantiles[i - 1]) {
      throw DomainError("quantile values must be non-decreasing");
    }
    total += 2.0 * pinball_loss(quantiles[i], obs, static_cast<double>(i + 1) / N1);
  }
  return total / N1;
}

/// (crps - best) / best in percent.
inline double relative_delta(double crps, double crps_best) {
  if (!(crps_best > 0.0)) throw DomainError("reference CRPS must be positive");
  return (crps - crps_best) / crps_best * 100.0;
}

/// Colour bands used when tabulating relative scores.
enum class DeltaBand { best, within_10, within_50, within_100, beyond_100 };

inline DeltaBand classify_delta(double delta_percent) {
  if (delta_percent <= 0.0) return DeltaBand::best;
  if (delta_percent <= 10.0) return DeltaBand::within_10;
  if (delta_percent <= 50.0) return DeltaBand::within_50;
  if (delta_percent <= 100.0) return DeltaBand::within_100;
  return DeltaBand::beyond_100;
}

inline std::string to_string(DeltaBand b) {
  switch (b) {
    case DeltaBand::best: return "best";
    case DeltaBand::within_10: return "within_10";
    case DeltaBand::within_50: return "within_50";
    case DeltaBand::within_100: return "within_100";
    case DeltaBand::beyond_100: return "beyond_100";
  }
  return "?";
}

/// Population standard deviation over mean, in percent.
inline double coefficient_of_variation(std::span<const double> values) {
  if (values.size() < 2) throw DomainError("coefficient of variation needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mu == 0.0) throw DomainError("coefficient of variation undefined for zero mean");
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  return std::sqrt(var / n) / std::abs(mu) * 100.0;
}

/// Produces sample paths for one test window.
using Forecaster = std::function<ForecastPaths(const TestWindow& window, std::size_t horizon,
                                               std::size_t num_paths, std::uint64_t seed)>;

struct WindowEvaluation {
  std::vector<double> per_window;               // mean CRPS over steps, per window
  std::vector<std::vector<double>> per_step;    // [window][step]
  double mean_crps = 0.0;                       // mean over windows
  std::optional<double> quantile_crps;          // same average, quantile form
};

/// Seed for window `w` of a run seeded with `seed` (splitmix64 finalizer).
inline std::uint64_t window_seed(std::uint64_t seed, std::size_t w) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (w + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Sample-based CRPS over the test windows: per step, then averaged over
/// steps within a window, then over windows. With `quantile_count` > 0 the
/// quantile-form CRPS of the same paths is averaged the same way.
inline WindowEvaluation evaluate_windows(const Forecaster& forecaster,
                                         const std::vector<TestWindow>& windows,
                                         std::size_t horizon, std::size_t num_paths,
                                         std::uint64_t seed, std::size_t quantile_count = 0) {
  if (windows.empty()) throw DataError("no test windows to evaluate");
  WindowEvaluation ev;
  const std::vector<double> levels = quantile_levels(quantile_count);
  double quantile_total = 0.0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const TestWindow& win = windows[w];
    if (win.truth.size() < horizon) throw DataError("test window shorter than the horizon");
    const ForecastPaths paths = forecaster(win, horizon, num_paths, window_seed(seed, w));
    if (paths.horizon != horizon || paths.num_paths == 0) {
      throw DataError("forecaster returned paths of the wrong shape");
    }
    std::vector<double> steps(horizon);
    for (std::size_t s = 0; s < horizon; ++s) {
      const EmpiricalDistribution dist(paths.step_samples(s));
      steps[s] = crps_samples(dist, win.truth[s]);
      if (quantile_count > 0) {
        std::vector<double> q;
        for (double a : levels) q.push_back(empirical_quantile(dist.sorted(), a));
        quantile_total += crps_quantiles(q, win.truth[s], quantile_count);
      }
    }
    ev.per_window.push_back(std::accumulate(steps.begin(), steps.end(), 0.0) /
                            static_cast<double>(horizon));
    ev.per_step.push_back(std::move(steps));
  }
  ev.mean_crps = std::accumulate(ev.per_window.begin(), ev.per_window.end(), 0.0) /
                 static_cast<double>(ev.per_window.size());
  if (quantile_count > 0) {
    ev.quantile_crps = quantile_total / static_cast<double>(windows.size() * horizon);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Reference forecasters

inline Forecaster model_forecaster(const TrainedModel& tm) {
  return [&tm](const TestWindow& w, std::size_t h, std::size_t n, std::uint64_t seed) {
    ForecastPaths p = forecast_paths(tm, w.history, h, n, seed);
    p.origin = w.origin;
    return p;
  };
}

/// Every path equals the realized future.
inline Forecaster oracle_forecaster() {
  return [](const TestWindow& w, std::size_t h, std::size_t n, std::uint64_t seed) {
    ForecastPaths p(n, h);
    p.origin = w.origin;
    p.seed = seed;
    p.model_id = "oracle";
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t s = 0; s < h; ++s) p.at(j, s) = w.truth[s];
    return p;
  };
}

/// Every path repeats the last observed value.
inline Forecaster persistence_forecaster() {
  return [](const TestWindow& w, std::size_t h, std::size_t n, std::uint64_t seed) {
    ForecastPaths p(n, h);
    p.origin = w.origin;
    p.seed = seed;
    p.model_id = "persistence";
    std::fill(p.values.begin(), p.values.end(), w.history.back());
    return p;
  };
}

/// Values drawn uniformly with replacement from the training region.
inline Forecaster climatology_forecaster(std::vector<double> train_values) {
  if (train_values.empty()) throw DataError("climatology needs training values");
  return [train = std::move(train_values)](const TestWindow& w, std::size_t h, std::size_t n,
                                           std::uint64_t seed) {
    ForecastPaths p(n, h);
    p.origin = w.origin;
    p.seed = seed;
    p.model_id = "climatology";
    RngStream rng(seed, 0xC11A);
    for (double& v : p.values) v = train[rng.uniform_index(train.size())];
    return p;
  };
}

}  // namespace vaeneu
