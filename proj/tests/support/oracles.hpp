#pragma once

// Reference computations that share no code with the library: direct
// quadrature, brute-force enumeration and closed forms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace vaeneu::testing {

/// Integral of (F(y) - 1{obs <= y})^2 over the real line for the empirical
/// CDF F of `samples`, evaluated piece by piece: both functions are constant
/// between consecutive points of samples U {obs}.
inline double crps_by_quadrature(std::vector<double> samples, double obs) {
  std::vector<double> knots = samples;
  knots.push_back(obs);
  std::sort(knots.begin(), knots.end());
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double a = knots[i], b = knots[i + 1];
    if (b <= a) continue;
    const double mid = 0.5 * (a + b);
    const double F =
        static_cast<double>(std::upper_bound(samples.begin(), samples.end(), mid) -
                            samples.begin()) / n;
    const double step = obs <= mid ? 1.0 : 0.0;
    total += (F - step) * (F - step) * (b - a);
  }
  return total;
}

/// Closed-form CRPS of N(mu, sigma^2) at y.
inline double gaussian_crps(double mu, double sigma, double y) {
  const double z = (y - mu) / sigma;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      std::size_t n = 200000) {
  if (n % 2) ++n;
  const double h = (b - a) / static_cast<double>(n);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double student_t_pdf(double t, double df) {
  return std::exp(std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df)) /
         std::sqrt(df * std::numbers::pi) * std::pow(1.0 + t * t / df, -0.5 * (df + 1.0));
}

/// P(T > t), t >= 0, by integrating the density from 0 to t.
inline double student_t_sf_numeric(double t, double df) {
  return 0.5 - simpson([df](double x) { return student_t_pdf(x, df); }, 0.0, t);
}

inline double chi2_pdf(double x, double k) {
  if (x <= 0.0) return 0.0;
  return std::exp((0.5 * k - 1.0) * std::log(x) - 0.5 * x - 0.5 * k * std::log(2.0) -
                  std::lgamma(0.5 * k));
}

/// Two-sided exact Wilcoxon p-value by listing all 2^m sign assignments of
/// the given ranks: min(1, 2 * #{assignments with W+ <= w} / 2^m).
inline double wilcoxon_p_enumerated(const std::vector<double>& ranks, double w) {
  const std::size_t m = ranks.size();
  const std::uint64_t total = std::uint64_t{1} << m;
  std::uint64_t count = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double wp = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (mask >> i & 1) wp += ranks[i];
    if (wp <= w + 1e-9) ++count;
  }
  return std::min(1.0, 2.0 * static_cast<double>(count) / static_cast<double>(total));
}

/// Ranks of |d| with average ranks for ties, by counting (O(m^2)).
inline std::vector<double> magnitude_ranks(const std::vector<double>& d) {
  std::vector<double> r(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

/// Full pairwise form of the sampled training CRPS for one row: absolute
/// error minus half the mean absolute difference over ordered pairs i != j.
inline double pairwise_training_crps(const std::vector<double>& f, double y) {
  const double S = static_cast<double>(f.size());
  double acc = 0.0, spread = 0.0;
  for (double v : f) acc += std::abs(v - y);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < f.size(); ++j)
      if (i != j) spread += std::abs(f[i] - f[j]);
  return acc / S - 0.5 * spread / (S * (S - 1.0));
}

}  // namespace vaeneu::testing
