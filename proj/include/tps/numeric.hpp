#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace tps {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// log(sum exp(v_i)), max-shifted. -inf entries contribute nothing; an
// all-(-inf) input returns -inf.
inline double log_sum_exp(std::span<const double> v) {
  double mx = neg_inf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == neg_inf) return neg_inf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

inline double normal_cdf(double x, double mean, double sd) {
  return normal_cdf((x - mean) / sd);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

// Weighted population moments; weights are assumed normalised.
inline Moments weighted_moments(std::span<const double> x, std::span<const double> w) {
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += w[i] * x[i];
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    var += w[i] * d * d;
  }
  return {mean, var};
}

// Type-1 weighted quantile: smallest sample value whose cumulative weight
// reaches q.
inline double weighted_quantile(std::span<const double> x, std::span<const double> w, double q) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  double cum = 0.0;
  for (std::size_t i : order) {
    cum += w[i];
    if (cum >= q) return x[i];
  }
  return x[order.back()];
}

}  // namespace tps
