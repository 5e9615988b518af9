#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tps/common.hpp"
#include "tps/numeric.hpp"

namespace tps {

// Mean square error of estimated smoothing means over time steps.
inline double msem(std::span<const double> est_means, std::span<const double> truth_means) {
  if (est_means.size() != truth_means.size())
    throw error("msem: length mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < est_means.size(); ++t) {
    const double d = est_means[t] - truth_means[t];
    s += d * d;
  }
  return s / static_cast<double>(est_means.size());
}

// Same statistic over variances.
inline double msev(std::span<const double> est_vars, std::span<const double> truth_vars) {
  return msem(est_vars, truth_vars);
}

// Kolmogorov-Smirnov distance between the weighted empirical CDF of
// (samples, weights) and a reference CDF, evaluated at the sample jump
// points with both one-sided limits (exact for step functions against a
// monotone CDF). Between consecutive jump points the empirical CDF is
// constant, so the supremum over each interval is attained at the reference
// CDF's end values: its right value at the interval start and its left
// limit at the interval end, the latter taken at the adjacent float.
inline double ks_statistic(std::span<const double> samples, std::span<const double> weights,
                           const std::function<double(double)>& truth_cdf) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a] < samples[b]; });
  double cum = 0.0, d = 0.0;
  for (std::size_t i : order) {
    const double x = samples[i];
    d = std::max(d, std::abs(cum - truth_cdf(std::nextafter(x, neg_inf))));
    cum += weights[i];
    d = std::max(d, std::abs(cum - truth_cdf(x)));
  }
  return d;
}

// Sum over time steps of the KS distance against per-step reference CDFs.
// `values[t]` are the time-t samples; weights are shared across steps.
inline double ks_sum(const std::vector<std::vector<double>>& values,
                     std::span<const double> weights,
                     const std::function<double(int, double)>& truth_cdf) {
  double s = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    s += ks_statistic(values[t], weights,
                      [&](double x) { return truth_cdf(static_cast<int>(t), x); });
  }
  return s;
}

// KL(joint || prod_a x prod_b) - KL(joint || marg_a x marg_b) for pmfs on an
// r x c grid (joint row-major). Nonnegative for every valid product
// proposal; zero when the proposal equals the exact marginals. A proposal
// that vanishes where the joint has mass violates absolute continuity and is
// rejected.
inline double kl_product_gap(std::span<const double> joint, int rows, int cols,
                             std::span<const double> prod_a, std::span<const double> prod_b) {
  if (static_cast<int>(joint.size()) != rows * cols ||
      static_cast<int>(prod_a.size()) != rows || static_cast<int>(prod_b.size()) != cols)
    throw error("kl_product_gap: dimension mismatch");
  std::vector<double> marg_a(static_cast<std::size_t>(rows), 0.0);
  std::vector<double> marg_b(static_cast<std::size_t>(cols), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double p = joint[static_cast<std::size_t>(i) * cols + j];
      marg_a[static_cast<std::size_t>(i)] += p;
      marg_b[static_cast<std::size_t>(j)] += p;
    }
  double kl_prod = 0.0, kl_marg = 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double p = joint[static_cast<std::size_t>(i) * cols + j];
      if (p <= 0.0) continue;
      const double q = prod_a[static_cast<std::size_t>(i)] * prod_b[static_cast<std::size_t>(j)];
      if (!(q > 0.0))
        throw error("kl_product_gap: invalid proposal (zero where the joint has mass)");
      kl_prod += p * std::log(p / q);
      kl_marg += p * std::log(p / (marg_a[static_cast<std::size_t>(i)] *
                                   marg_b[static_cast<std::size_t>(j)]));
    }
  }
  return kl_prod - kl_marg;
}

// ---------------------------------------------------------------------------
// Benchmark report rows
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsCsvHeader =
    "replication,algorithm,N,n,nprime,msem,msev,ks_sum,runtime_ms,seed";

struct MetricsRow {
  int replication = 0;          // 1-based
  std::string algorithm;
  long long N = 0;
  long long n = -1;             // -1 renders as NA
  long long nprime = -1;
  double msem = 0.0;
  double msev = 0.0;
  double ks_sum = 0.0;
  double runtime_ms = 0.0;
  std::uint64_t seed = 0;
};

inline std::string metrics_csv_line(const MetricsRow& r) {
  char buf[320];
  char ncol[32], npcol[32];
  if (r.n < 0) {
    std::snprintf(ncol, sizeof(ncol), "NA");
  } else {
    std::snprintf(ncol, sizeof(ncol), "%lld", r.n);
  }
  if (r.nprime < 0) {
    std::snprintf(npcol, sizeof(npcol), "NA");
  } else {
    std::snprintf(npcol, sizeof(npcol), "%lld", r.nprime);
  }
  std::snprintf(buf, sizeof(buf), "%d,%s,%lld,%s,%s,%.10g,%.10g,%.10g,%.3f,%llu",
                r.replication, r.algorithm.c_str(), r.N, ncol, npcol, r.msem, r.msev,
                r.ks_sum, r.runtime_ms, static_cast<unsigned long long>(r.seed));
  return buf;
}

}  // namespace tps
