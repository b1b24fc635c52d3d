#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaeneu/special.hpp"

namespace vaeneu {

/// scores[m][d] holds the per-run scores of model m on dataset d.
struct ScoreMatrix {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  std::vector<std::vector<std::vector<double>>> scores;

  std::size_t num_models() const { return models.size(); }
  std::size_t num_datasets() const { return datasets.size(); }

  double mean(std::size_t m, std::size_t d) const {
    const auto& r = scores[m][d];
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  }

  /// Throws DataError on ragged or invalid contents.
  void validate() const {
    if (models.empty()) throw DataError("score matrix has no models");
    if (datasets.empty()) throw DataError("score matrix has no datasets");
    if (scores.size() != models.size()) throw DataError("score matrix is ragged: model count");
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (scores[m].size() != datasets.size()) {
        throw DataError("score matrix is ragged: model '" + models[m] + "' lacks datasets");
      }
      for (std::size_t d = 0; d < datasets.size(); ++d) {
        if (scores[m][d].empty()) {
          throw DataError("model '" + models[m] + "' has no runs on '" + datasets[d] + "'");
        }
        for (double v : scores[m][d]) {
          if (!std::isfinite(v) || v < 0.0) {
            throw DataError("score of '" + models[m] + "' on '" + datasets[d] +
                            "' is not a finite non-negative number");
          }
        }
      }
    }
  }

  /// mean score [model][dataset]
  std::vector<std::vector<double>> means() const {
    std::vector<std::vector<double>> out(models.size(), std::vector<double>(datasets.size()));
    for (std::size_t m = 0; m < models.size(); ++m)
      for (std::size_t d = 0; d < datasets.size(); ++d) out[m][d] = mean(m, d);
    return out;
  }
};

/// 1-based ranks, ascending, tied values share the average of their ranks.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

struct FriedmanResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> mean_ranks;  // per model
};

/// scores[m][d]: one summary score per model and dataset (lower is better).
///   chi2_F = 12 n / (k (k + 1)) * (sum_j Rbar_j^2 - k (k + 1)^2 / 4)
inline FriedmanResult friedman_test(const std::vector<std::vector<double>>& scores) {
  const std::size_t k = scores.size();
  if (k < 2) throw DomainError("Friedman test needs at least two models");
  const std::size_t n = scores[0].size();
  if (n < 2) throw DomainError("Friedman test needs at least two datasets");
  for (const auto& row : scores) {
    if (row.size() != n) throw DomainError("Friedman test needs a rectangular score matrix");
  }
  FriedmanResult r;
  r.mean_ranks.assign(k, 0.0);
  std::vector<double> column(k);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t m = 0; m < k; ++m) column[m] = scores[m][d];
    const auto ranks = average_ranks(column);
    for (std::size_t m = 0; m < k; ++m) r.mean_ranks[m] += ranks[m];
  }
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  double sq = 0.0;
  for (double& R : r.mean_ranks) {
    R /= nd;
    sq += R * R;
  }
  r.statistic = 12.0 * nd / (kd * (kd + 1.0)) * (sq - kd * (kd + 1.0) * (kd + 1.0) / 4.0);
  if (std::abs(r.statistic) < 1e-12) r.statistic = 0.0;
  r.p_value = special::chi2_sf(r.statistic, kd - 1.0);
  return r;
}

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_value = 1.0;
  bool reject = false;
  std::size_t nonzero = 0;  // m, differences left after dropping zeros
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;

namespace detail {

/// Null distribution of 2 W+ for the given doubled ranks: counts[s] is the
/// number of sign assignments whose positive doubled ranks sum to s.
inline std::vector<double> signed_rank_counts(const std::vector<int>& doubled_ranks) {
  const int total = std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), 0);
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int r : doubled_ranks) {
    for (int s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + r)] += counts[s];
    reach += r;
  }
  return counts;
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; tied magnitudes get average ranks. For
/// m <= 20 the p-value is exact, counting all 2^m sign assignments, and is
/// min(1, 2 P(W+ <= W)). Beyond that a normal approximation with tie and
/// continuity corrections is used.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           double alpha = 0.05) {
  if (a.size() != b.size()) throw DomainError("Wilcoxon test needs paired samples");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult r;
  r.nonzero = diffs.size();
  if (diffs.empty()) return r;

  std::vector<double> mags(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) mags[i] = std::abs(diffs[i]);
  const auto ranks = average_ranks(mags);
  double w_plus = 0.0;
  double w_minus = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? w_plus : w_minus) += ranks[i];
  r.w_plus = w_plus;
  r.statistic = std::min(w_plus, w_minus);
  const std::size_t m = diffs.size();

  if (m <= kWilcoxonExactLimit) {
    std::vector<int> doubled(m);
    for (std::size_t i = 0; i < m; ++i) doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
    const auto counts = detail::signed_rank_counts(doubled);
    const int w2 = static_cast<int>(std::lround(2.0 * r.statistic));
    double below = 0.0;
    for (int s = 0; s <= w2; ++s) below += counts[static_cast<std::size_t>(s)];
    r.p_value = std::min(1.0, 2.0 * below / std::ldexp(1.0, static_cast<int>(m)));
  } else {
    r.exact = false;
    const double md = static_cast<double>(m);
    double tie_term = 0.0;
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < m;) {
      std::size_t j = i;
      while (j + 1 < m && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
    const double mu = md * (md + 1.0) / 4.0;
    const double var = md * (md + 1.0) * (2.0 * md + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
      r.p_value = 1.0;
    } else {
      const double z = std::min(0.0, r.statistic - mu + 0.5) / std::sqrt(var);
      r.p_value = std::min(1.0, 2.0 * special::normal_cdf(z));
    }
  }
  r.reject = r.p_value < alpha;
  return r;
}

struct PairedTTestResult {
  double t = 0.0;
  double p_value = 1.0;
  bool a_better = false;
  bool degenerate = false;  // zero variance of the differences
};

/// One-sided paired t-test of "A scores lower than B" with d = b - a.
/// Zero-variance differences: a positive mean counts as A better in every
/// run, a zero mean is a tie.
inline PairedTTestResult paired_t_test_one_sided(std::span<const double> a,
                                                 std::span<const double> b,
                                                 double alpha = 0.05) {
  if (a.size() != b.size()) throw DomainError("paired t-test needs equal run counts");
  if (a.size() < 2) throw DomainError("paired t-test needs at least two runs");
  const std::size_t r = a.size();
  const double rd = static_cast<double>(r);
  std::vector<double> d(r);
  for (std::size_t i = 0; i < r; ++i) d[i] = b[i] - a[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / rd;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (rd - 1.0));

  PairedTTestResult res;
  if (sd == 0.0) {
    res.degenerate = true;
    if (mean > 0.0) {
      res.t = std::numeric_limits<double>::infinity();
      res.p_value = 0.0;
      res.a_better = true;
    } else if (mean < 0.0) {
      res.t = -std::numeric_limits<double>::infinity();
      res.p_value = 1.0;
    }
    return res;
  }
  res.t = mean / (sd / std::sqrt(rd));
  res.p_value = special::student_t_sf(res.t, rd - 1.0);
  res.a_better = res.p_value < alpha;
  return res;
}

struct RankResult {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> per_dataset;  // [dataset][model]
  std::vector<double> average;                   // per model
  std::vector<std::size_t> order;                // model indices by average rank
};

/// rank(m) on a dataset = 1 + number of models that significantly beat m,
/// where "beats" is a one-sided paired t-test applied when the beating
/// model has the lower mean.
inline RankResult per_dataset_ranks(const ScoreMatrix& sm, double alpha = 0.05) {
  sm.validate();
  const std::size_t k = sm.num_models();
  const std::size_t n = sm.num_datasets();
  RankResult r;
  r.models = sm.models;
  r.datasets = sm.datasets;
  r.per_dataset.assign(n, std::vector<double>(k, 1.0));
  r.average.assign(k, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t m = 0; m < k; ++m) {
      for (std::size_t o = 0; o < k; ++o) {
        if (o == m || !(sm.mean(o, d) < sm.mean(m, d))) continue;
        if (paired_t_test_one_sided(sm.scores[o][d], sm.scores[m][d], alpha).a_better) {
          r.per_dataset[d][m] += 1.0;
        }
      }
      r.average[m] += r.per_dataset[d][m] / static_cast<double>(n);
    }
  }
  r.order.resize(k);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t x, std::size_t y) {
    if (r.average[x] != r.average[y]) return r.average[x] < r.average[y];
    return r.models[x] < r.models[y];
  });
  return r;
}

struct CdBands {
  std::vector<std::string> ordered_models;
  std::vector<double> ordered_ranks;
  std::vector<std::vector<std::string>> bands;
  std::optional<FriedmanResult> friedman;
  std::string warning;  // non-empty when the bands are trivial
};

/// Groups models, in average-rank order, into maximal contiguous runs in
/// which no pair differs by a Wilcoxon test over the per-dataset mean
/// scores. If the Friedman test does not reject equal performance, all
/// models form a single band.
inline CdBands cd_bands(const ScoreMatrix& sm, const RankResult& ranks, double alpha = 0.05) {
  sm.validate();
  const std::size_t k = sm.num_models();
  const auto means = sm.means();
  CdBands out;
  for (std::size_t idx : ranks.order) {
    out.ordered_models.push_back(sm.models[idx]);
    out.ordered_ranks.push_back(ranks.average[idx]);
  }
  if (k < 2 || sm.num_datasets() < 2) {
    out.warning = "Friedman test skipped: needs at least two models and two datasets";
    out.bands.push_back(out.ordered_models);
    return out;
  }
  out.friedman = friedman_test(means);
  if (!(out.friedman->p_value < alpha)) {
    out.warning = "Friedman test did not reject equal performance (p = " +
                  std::to_string(out.friedman->p_value) + "); reporting a single band";
    out.bands.push_back(out.ordered_models);
    return out;
  }

  std::vector<std::vector<bool>> differs(k, std::vector<bool>(k, false));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto& a = means[ranks.order[i]];
      const auto& b = means[ranks.order[j]];
      differs[i][j] = differs[j][i] = wilcoxon_signed_rank(a, b, alpha).reject;
    }
  }
  // Furthest position each start can reach; non-decreasing in the start.
  std::vector<std::size_t> reach(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i;
    while (j + 1 < k) {
      bool ok = true;
      for (std::size_t p = i; p <= j && ok; ++p) ok = !differs[p][j + 1];
      if (!ok) break;
      ++j;
    }
    reach[i] = j;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (i > 0 && reach[i] <= reach[i - 1]) continue;  // contained in the previous band
    out.bands.emplace_back(out.ordered_models.begin() + static_cast<std::ptrdiff_t>(i),
                           out.ordered_models.begin() + static_cast<std::ptrdiff_t>(reach[i] + 1));
  }
  return out;
}

}  // namespace vaeneu
