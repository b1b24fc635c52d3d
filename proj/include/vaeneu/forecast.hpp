#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vaeneu/checkpoint.hpp"

namespace vaeneu {

/// N sample trajectories of length h, row-major, in original data units.
struct ForecastPaths {
  std::size_t num_paths = 0;
  std::size_t horizon = 0;
  std::vector<double> values;  // num_paths x horizon
  std::size_t origin = 0;
  std::string model_id;
  std::uint64_t seed = 0;

  ForecastPaths() = default;
  ForecastPaths(std::size_t n, std::size_t h) : num_paths(n), horizon(h), values(n * h) {}

  double& at(std::size_t path, std::size_t step) { return values[path * horizon + step]; }
  double at(std::size_t path, std::size_t step) const { return values[path * horizon + step]; }

  /// All samples for one horizon step.
  std::vector<double> step_samples(std::size_t step) const {
    std::vector<double> s(num_paths);
    for (std::size_t p = 0; p < num_paths; ++p) s[p] = at(p, step);
    return s;
  }
};

/// A trained network together with the normalization it was trained under.
struct TrainedModel {
  VaeneuModel model;
  NormalizationStats stats;
  std::string id;

  static TrainedModel from_checkpoint(const Checkpoint& c) {
    return {c.build_model(), c.stats, c.model_id()};
  }
};

/// One draw of x_{t+1} given a normalized history: z ~ N(0, I), then decode.
inline double sample_one_step(const VaeneuModel& model, std::span<const double> history,
                              RngStream& rng) {
  if (history.size() != model.history_size()) {
    throw ShapeError("history length " + std::to_string(history.size()) + " != " +
                     std::to_string(model.history_size()));
  }
  const Tensor h(Shape{1, history.size()}, std::vector<double>(history.begin(), history.end()));
  const LatentSample z{standard_normal(rng, Shape{1, model.latent_size()}), LatentSource::prior};
  return model.decode(h, z).item();
}

/// Point forecast: decode with z = 0 (the prior mode).
inline double point_one_step(const VaeneuModel& model, std::span<const double> history) {
  const Tensor h(Shape{1, history.size()}, std::vector<double>(history.begin(), history.end()));
  return model.decode(h, {Tensor(Shape{1, model.latent_size()}), LatentSource::prior}).item();
}

/// Autoregressive sampling of `num_paths` trajectories.
///
/// Path j draws its latent noise from RngStream(seed, j), one latent vector
/// per step, and feeds its own samples back as history. Paths are computed
/// in fixed-size blocks, which bounds memory for large N.
inline ForecastPaths forecast_paths(const TrainedModel& tm, std::span<const double> history_raw,
                                    std::size_t horizon, std::size_t num_paths,
                                    std::uint64_t seed, std::size_t block = 256) {
  const std::size_t hws = tm.model.history_size();
  const std::size_t L = tm.model.latent_size();
  if (horizon == 0 || num_paths == 0) throw DomainError("horizon and path count must be positive");
  if (history_raw.size() != hws) {
    throw ShapeError("history length " + std::to_string(history_raw.size()) + " != " +
                     std::to_string(hws));
  }
  ForecastPaths out(num_paths, horizon);
  out.model_id = tm.id;
  out.seed = seed;
  std::vector<double> normalized(hws);
  for (std::size_t i = 0; i < hws; ++i) normalized[i] = tm.stats.normalize(history_raw[i]);

  for (std::size_t first = 0; first < num_paths; first += block) {
    const std::size_t n = std::min(block, num_paths - first);
    std::vector<RngStream> streams;
    streams.reserve(n);
    for (std::size_t j = 0; j < n; ++j) streams.emplace_back(seed, first + j);
    Tensor window(Shape{n, hws});
    for (std::size_t j = 0; j < n; ++j)
      std::copy(normalized.begin(), normalized.end(), window.values().begin() + j * hws);
    for (std::size_t step = 0; step < horizon; ++step) {
      Tensor z(Shape{n, L});
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < L; ++d) z.at(j, d) = streams[j].normal();
      const Tensor next = tm.model.decode(window, {z, LatentSource::prior});
      for (std::size_t j = 0; j < n; ++j) {
        const double v = next[j];
        if (!std::isfinite(v)) throw TrainingError("forecast produced a non-finite value");
        out.at(first + j, step) = tm.stats.denormalize(v);
        double* row = &window.values()[j * hws];
        std::copy(row + 1, row + hws, row);
        row[hws - 1] = v;
      }
    }
  }
  return out;
}

/// alpha_i = i / (N + 1), i = 1..N.
inline std::vector<double> quantile_levels(std::size_t count = 99) {
  std::vector<double> levels(count);
  for (std::size_t i = 0; i < count; ++i)
    levels[i] = static_cast<double>(i + 1) / static_cast<double>(count + 1);
  return levels;
}

/// Empirical quantile of sorted data, linear interpolation between order
/// statistics at position (n - 1) * alpha.
inline double empirical_quantile(std::span<const double> sorted, double alpha) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double pos = alpha * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Per-step quantiles: result[step][k] for levels[k].
inline std::vector<std::vector<double>> summarize_quantiles(const ForecastPaths& paths,
                                                            const std::vector<double>& levels) {
  if (levels.empty()) throw DomainError("no quantile levels given");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw DomainError("quantile level outside (0, 1)");
    if (i > 0 && levels[i] < levels[i - 1]) throw DomainError("quantile levels must be sorted");
  }
  std::vector<std::vector<double>> table(paths.horizon);
  for (std::size_t s = 0; s < paths.horizon; ++s) {
    std::vector<double> samples = paths.step_samples(s);
    std::sort(samples.begin(), samples.end());
    for (double a : levels) table[s].push_back(empirical_quantile(samples, a));
  }
  return table;
}

/// CSV body: one row per path, one column per horizon step.
inline std::string paths_to_csv(const ForecastPaths& paths) {
  std::string out;
  for (std::size_t p = 0; p < paths.num_paths; ++p) {
    for (std::size_t s = 0; s < paths.horizon; ++s) {
      if (s) out += ',';
      out += detail::format_double(paths.at(p, s));
    }
    out += '\n';
  }
  return out;
}

}  // namespace vaeneu
