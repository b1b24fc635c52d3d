#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vaeneu/error.hpp"

namespace vaeneu {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

/// Univariate series x_0 .. x_T. Missing observations are NaN until an
/// imputation pass removes them.
struct TimeSeries {
  std::string name;
  std::string frequency;
  std::vector<double> values;
  std::vector<std::string> timestamps;  // empty, or one per value

  std::size_t size() const { return values.size(); }
  std::size_t missing_count() const {
    std::size_t n = 0;
    for (double v : values) n += is_missing(v);
    return n;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

inline bool is_missing_token(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a one-column (value) or two-column (timestamp,value) CSV. A first
/// line whose value cell is not numeric is taken as a header. Empty, NA and
/// NaN cells become missing values.
inline TimeSeries parse_csv(std::string_view text, std::string name = "series") {
  TimeSeries ts;
  ts.name = std::move(name);
  std::size_t line_no = 0;
  std::size_t columns = 0;
  bool any_line = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) {
      if (nl >= text.size()) break;
      continue;
    }
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string_view::npos ? line.size() - start
                                                                         : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (cells.size() > 2) {
      throw DataError("line " + std::to_string(line_no) + ": expected 1 or 2 columns, found " +
                      std::to_string(cells.size()));
    }
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(columns) + " columns, found " +
                      std::to_string(cells.size()));
    }
    const std::string_view cell = cells.back();
    double v = 0.0;
    if (detail::is_missing_token(cell)) {
      v = kMissing;
    } else if (!detail::parse_double(cell, v)) {
      if (!any_line) {  // header
        any_line = true;
        continue;
      }
      throw DataError("line " + std::to_string(line_no) + ": value '" + std::string(cell) +
                      "' is not a number");
    }
    any_line = true;
    ts.values.push_back(v);
    if (columns == 2) ts.timestamps.emplace_back(detail::trim(cells.front()));
    if (nl >= text.size()) break;
  }
  if (ts.values.empty()) throw DataError("CSV contains no observations");
  return ts;
}

inline TimeSeries load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (auto dot = name.find_last_of('.'); dot != std::string::npos && dot > 0) name.resize(dot);
  try {
    return parse_csv(ss.str(), name);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Inverse of parse_csv: header "value" (or "timestamp,value"), shortest
/// round-trip formatting.
inline std::string to_csv(const TimeSeries& ts) {
  std::string out = ts.timestamps.empty() ? "value\n" : "timestamp,value\n";
  for (std::size_t i = 0; i < ts.values.size(); ++i) {
    if (!ts.timestamps.empty()) out += ts.timestamps[i] + ",";
    if (!is_missing(ts.values[i])) out += detail::format_double(ts.values[i]);
    out += '\n';
  }
  return out;
}

/// Each run of missing values becomes the mean of the nearest observed
/// neighbours on both sides; runs touching an end take the single nearest
/// observed value.
inline TimeSeries impute_adjacent_mean(TimeSeries ts) {
  auto& v = ts.values;
  const std::size_t n = v.size();
  std::size_t i = 0;
  bool any = false;
  for (double x : v) any |= !is_missing(x);
  if (!any) throw DataError("series '" + ts.name + "' has no observed values");
  while (i < n) {
    if (!is_missing(v[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_missing(v[j])) ++j;
    double fill;
    if (i == 0) fill = v[j];
    else if (j == n) fill = v[i - 1];
    else fill = 0.5 * (v[i - 1] + v[j]);
    for (std::size_t k = i; k < j; ++k) v[k] = fill;
    i = j;
  }
  return ts;
}

/// Last observation carried forward.
inline TimeSeries impute_locf(TimeSeries ts) {
  if (ts.values.empty()) return ts;
  if (is_missing(ts.values.front())) {
    throw DataError("series '" + ts.name + "' starts with a missing value; LOCF undefined");
  }
  for (std::size_t i = 1; i < ts.values.size(); ++i) {
    if (is_missing(ts.values[i])) ts.values[i] = ts.values[i - 1];
  }
  return ts;
}

/// Means of non-overlapping blocks of `factor` values; a trailing partial
/// block is dropped. Each block keeps its first timestamp.
inline TimeSeries aggregate_resample(TimeSeries ts, std::size_t factor) {
  if (factor == 0) throw DataError("resample factor must be positive");
  if (factor == 1) return ts;
  const std::size_t blocks = ts.values.size() / factor;
  std::vector<double> out(blocks);
  std::vector<std::string> stamps;
  for (std::size_t b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < factor; ++k) s += ts.values[b * factor + k];
    out[b] = s / static_cast<double>(factor);
    if (!ts.timestamps.empty()) stamps.push_back(ts.timestamps[b * factor]);
  }
  ts.values = std::move(out);
  ts.timestamps = std::move(stamps);
  return ts;
}

/// z-score statistics of the training region.
struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;

  static NormalizationStats fit(std::span<const double> values) {
    NormalizationStats s;
    if (values.empty()) return s;
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - m) * (v - m);
    var /= static_cast<double>(values.size());
    s.mean = m;
    s.std = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
  }

  double normalize(double v) const { return (v - mean) / std; }
  double denormalize(double v) const { return v * std + mean; }
};

/// Sliding (history, next value) pairs over a normalized series.
/// Window i has target series[targets[i]] and history
/// series[targets[i] - HWS, targets[i]).
struct WindowedDataset {
  std::vector<double> series;
  std::vector<std::size_t> targets;
  std::size_t history_size = 0;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
  std::span<const double> history(std::size_t i) const {
    return std::span<const double>(series).subspan(targets[i] - history_size, history_size);
  }
  double target(std::size_t i) const { return series[targets[i]]; }
};

/// One evaluation window, in original units.
struct TestWindow {
  std::size_t origin = 0;       // index of the first forecast step
  std::vector<double> history;  // HWS values before origin
  std::vector<double> truth;    // h values from origin
};

struct SplitSpec {
  std::size_t train_end = 0;       // train region is [0, train_end)
  std::size_t validation_end = 0;  // validation targets [train_end, validation_end)
  std::size_t test_begin = 0;      // == validation_end; test region runs to the end
};

struct SplitResult {
  SplitSpec spec;
  NormalizationStats stats;
  WindowedDataset train;
  WindowedDataset validation;
  std::vector<TestWindow> test;
  std::vector<double> train_values;  // original units, for baselines
};

/// Minimum series length for split_and_window.
inline std::size_t required_length(std::size_t history_size, std::size_t horizon) {
  return history_size + 6 * horizon + 1;
}

/// Tail 5h points are the test region (five consecutive horizon-length
/// windows), the h points before it are validation targets, the rest is
/// training data. Statistics come from the training region only.
inline SplitResult split_and_window(const TimeSeries& ts, std::size_t history_size,
                                    std::size_t horizon, std::size_t test_windows = 5) {
  if (history_size == 0 || horizon == 0) throw DataError("history and horizon must be positive");
  const std::size_t need = history_size + (test_windows + 1) * horizon + 1;
  if (ts.size() < need) {
    throw DataError("series '" + ts.name + "' has " + std::to_string(ts.size()) +
                    " points; at least " + std::to_string(need) + " required");
  }
  if (ts.missing_count() > 0) throw DataError("series '" + ts.name + "' still has missing values");
  SplitResult r;
  const std::size_t n = ts.size();
  r.spec.test_begin = n - test_windows * horizon;
  r.spec.validation_end = r.spec.test_begin;
  r.spec.train_end = r.spec.test_begin - horizon;

  const std::span<const double> all(ts.values);
  r.train_values.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(r.spec.train_end));
  r.stats = NormalizationStats::fit(r.train_values);

  std::vector<double> normalized(n);
  for (std::size_t i = 0; i < n; ++i) normalized[i] = r.stats.normalize(ts.values[i]);

  r.train.history_size = r.validation.history_size = history_size;
  r.train.series.assign(normalized.begin(),
                        normalized.begin() + static_cast<std::ptrdiff_t>(r.spec.train_end));
  for (std::size_t t = history_size; t < r.spec.train_end; ++t) r.train.targets.push_back(t);
  r.validation.series.assign(
      normalized.begin(), normalized.begin() + static_cast<std::ptrdiff_t>(r.spec.validation_end));
  for (std::size_t t = r.spec.train_end; t < r.spec.validation_end; ++t) {
    r.validation.targets.push_back(t);
  }
  for (std::size_t w = 0; w < test_windows; ++w) {
    TestWindow tw;
    tw.origin = r.spec.test_begin + w * horizon;
    tw.history.assign(all.begin() + static_cast<std::ptrdiff_t>(tw.origin - history_size),
                      all.begin() + static_cast<std::ptrdiff_t>(tw.origin));
    tw.truth.assign(all.begin() + static_cast<std::ptrdiff_t>(tw.origin),
                    all.begin() + static_cast<std::ptrdiff_t>(tw.origin + horizon));
    r.test.push_back(std::move(tw));
  }
  return r;
}

struct MackeyGlassParams {
  double decay = 0.1;       // a
  double production = 0.2;  // b
  double exponent = 10.0;
  double tau = 17.0;
  double dt = 0.1;
  std::size_t burn_in = 1000;  // integration steps discarded
  double x_init = 1.2;
};

/// Mackey-Glass delay equation
///   dx/dt = b x(t - tau) / (1 + x(t - tau)^n) - a x(t)
/// integrated with classical RK4. The delayed value at RK4 stage times is
/// linearly interpolated from the stored trajectory; before t = 0 the
/// history is the constant x_init. One output per unit time.
inline TimeSeries mackey_glass_generate(std::size_t length, const MackeyGlassParams& p = {}) {
  if (!(p.dt > 0.0)) throw DataError("Mackey-Glass step dt must be positive");
  if (length == 0) throw DataError("Mackey-Glass length must be positive");
  const std::size_t per_unit = static_cast<std::size_t>(std::llround(1.0 / p.dt));
  if (per_unit == 0 || std::abs(per_unit * p.dt - 1.0) > 1e-9) {
    throw DataError("Mackey-Glass dt must divide unit time");
  }
  const double lag_steps = p.tau / p.dt;
  const std::size_t total = p.burn_in + length * per_unit;

  std::vector<double> x;
  x.reserve(total + 1);
  x.push_back(p.x_init);
  // x at integration time s (in steps, may be fractional or negative).
  auto at = [&](double s) {
    if (s <= 0.0) return s < 0.0 ? p.x_init : x[0];
    const double fl = std::floor(s);
    const std::size_t i = static_cast<std::size_t>(fl);
    const double frac = s - fl;
    if (frac == 0.0 || i + 1 >= x.size()) return x[i];
    return x[i] + frac * (x[i + 1] - x[i]);
  };
  auto rhs = [&](double xt, double xlag) {
    return p.production * xlag / (1.0 + std::pow(xlag, p.exponent)) - p.decay * xt;
  };

  TimeSeries ts;
  ts.name = "mackey-glass";
  ts.frequency = "unit";
  ts.values.reserve(length);
  for (std::size_t n = 0; n < total; ++n) {
    const double s = static_cast<double>(n);
    const double xn = x[n];
    const double lag0 = at(s - lag_steps);
    const double lag_half = at(s + 0.5 - lag_steps);
    const double lag1 = at(s + 1.0 - lag_steps);
    const double k1 = rhs(xn, lag0);
    const double k2 = rhs(xn + 0.5 * p.dt * k1, lag_half);
    const double k3 = rhs(xn + 0.5 * p.dt * k2, lag_half);
    const double k4 = rhs(xn + p.dt * k3, lag1);
    x.push_back(xn + p.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    const std::size_t produced = n + 1;
    if (produced > p.burn_in && (produced - p.burn_in) % per_unit == 0) {
      ts.values.push_back(x.back());
    }
  }
  return ts;
}

}  // namespace vaeneu
