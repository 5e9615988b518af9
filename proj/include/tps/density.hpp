#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "tps/common.hpp"
#include "tps/numeric.hpp"

namespace tps {

// ---------------------------------------------------------------------------
// Moment-matched normal
// ---------------------------------------------------------------------------

struct NormalFit {
  double mean = 0.0;
  double var = 1.0;
};

// Weighted population moments. Degenerate (all-equal) samples floor the
// variance at 1e-12 with a warning instead of failing.
inline NormalFit fit_normal_weighted(std::span<const double> x, std::span<const double> w) {
  if (x.size() < 2) throw error("fit_normal_weighted: need at least two samples");
  const Moments mo = weighted_moments(x, w);
  NormalFit f{mo.mean, mo.var};
  if (f.var < 1e-12) {
    warn("fit_normal_weighted: degenerate sample, flooring variance at 1e-12");
    f.var = 1e-12;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Weighted Gaussian KDE
// ---------------------------------------------------------------------------

// Weighted Silverman rule: 0.9 min(sd, IQR/1.34) n_eff^(-1/5) with
// n_eff = 1 / sum w_i^2.
inline double silverman_bandwidth(std::span<const double> x, std::span<const double> w) {
  const double sd = std::sqrt(weighted_moments(x, w).var);
  const double iqr = weighted_quantile(x, w, 0.75) - weighted_quantile(x, w, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  if (!(spread > 0.0)) spread = std::max(std::abs(x[0]) * 1e-6, 1e-9);
  double s2 = 0.0;
  for (double wi : w) s2 += wi * wi;
  const double n_eff = 1.0 / s2;
  return 0.9 * spread * std::pow(n_eff, -0.2);
}

// Gaussian-kernel mixture over weighted support points. Kernel evaluation is
// truncated at 8 bandwidths (relative tail below 1e-14).
class WeightedKDE {
 public:
  WeightedKDE(std::vector<double> points, std::vector<double> weights, double bandwidth)
      : h_(bandwidth) {
    if (points.size() < 2) throw error("WeightedKDE: need at least two samples");
    if (!(h_ > 0.0)) throw error("WeightedKDE: bandwidth must be positive");
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    x_.reserve(points.size());
    w_.reserve(points.size());
    for (std::size_t i : order) {
      x_.push_back(points[i]);
      w_.push_back(weights[i]);
    }
    double sum = 0.0;
    for (double wi : w_) sum += wi;
    for (double& wi : w_) wi /= sum;
    cumw_.resize(w_.size());
    double cum = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) {
      cum += w_[i];
      cumw_[i] = cum;
    }
    cumw_.back() = 1.0;
  }

  double log_density(double x) const {
    const auto lo = std::lower_bound(x_.begin(), x_.end(), x - 8.0 * h_);
    const auto hi = std::upper_bound(x_.begin(), x_.end(), x + 8.0 * h_);
    double dens = 0.0;
    const double norm = 1.0 / (h_ * std::sqrt(2.0 * std::numbers::pi));
    for (auto it = lo; it != hi; ++it) {
      const double z = (x - *it) / h_;
      dens += w_[static_cast<std::size_t>(it - x_.begin())] * std::exp(-0.5 * z * z);
    }
    dens *= norm;
    return dens > 0.0 ? std::log(dens) : neg_inf;
  }

  double cdf(double x) const {
    double c = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) c += w_[i] * normal_cdf(x, x_[i], h_);
    return c;
  }

  double sample(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::lower_bound(cumw_.begin(), cumw_.end(), u);
    const std::size_t i = static_cast<std::size_t>(it - cumw_.begin());
    return x_[i] + h_ * std::normal_distribution<double>(0.0, 1.0)(rng);
  }

  double bandwidth() const { return h_; }
  const std::vector<double>& points() const { return x_; }
  const std::vector<double>& weights() const { return w_; }

 private:
  std::vector<double> x_, w_, cumw_;  // sorted by x
  double h_;
};

inline WeightedKDE kde_fit(std::span<const double> samples, std::span<const double> weights,
                           std::optional<double> bandwidth = {}) {
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples, weights);
  return WeightedKDE(std::vector<double>(samples.begin(), samples.end()),
                     std::vector<double>(weights.begin(), weights.end()), h);
}

// ---------------------------------------------------------------------------
// Piecewise-constant grid
// ---------------------------------------------------------------------------

// Step density over a uniform grid of bin centers x1, x1+delta, ...; bin i
// covers [x_i - delta/2, x_i + delta/2). Construction renormalises so
// delta * sum(d) == 1 and records the factor. Sampling is inverse-CDF over
// bins (O(log n)) and exact for the step function.
class GridDensity {
 public:
  GridDensity(double x1, double delta, std::vector<double> densities)
      : x1_(x1), delta_(delta), d_(std::move(densities)) {
    if (!(delta_ > 0.0)) throw error("GridDensity: delta must be positive");
    if (d_.empty()) throw error("GridDensity: empty density vector");
    double mass = 0.0;
    for (double v : d_) {
      if (v < 0.0) throw error("GridDensity: negative density");
      mass += v * delta_;
    }
    if (!(mass > 0.0)) throw degenerate_error("GridDensity: zero total mass");
    log_renorm_ = -std::log(mass);
    for (double& v : d_) v /= mass;
    cum_.resize(d_.size() + 1);
    cum_[0] = 0.0;
    for (std::size_t i = 0; i < d_.size(); ++i) cum_[i + 1] = cum_[i] + d_[i] * delta_;
    cum_.back() = 1.0;
  }

  double lo() const { return x1_ - 0.5 * delta_; }
  double hi() const { return x1_ - 0.5 * delta_ + delta_ * static_cast<double>(d_.size()); }

  double log_density(double x) const {
    const int i = bin_of(x);
    if (i < 0) return neg_inf;
    return d_[static_cast<std::size_t>(i)] > 0.0 ? std::log(d_[static_cast<std::size_t>(i)])
                                                 : neg_inf;
  }

  double cdf(double x) const {
    if (x < lo()) return 0.0;
    if (x >= hi()) return 1.0;
    const int i = bin_of(x);
    const double left = lo() + delta_ * static_cast<double>(i);
    return cum_[static_cast<std::size_t>(i)] + d_[static_cast<std::size_t>(i)] * (x - left);
  }

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - cum_.begin());
    i = (i == 0) ? 0 : i - 1;
    if (i >= d_.size()) i = d_.size() - 1;
    const double left = lo() + delta_ * static_cast<double>(i);
    return left + delta_ * unif(rng);
  }

  int bins() const { return static_cast<int>(d_.size()); }
  double x1() const { return x1_; }
  double delta() const { return delta_; }
  const std::vector<double>& densities() const { return d_; }
  double log_renorm() const { return log_renorm_; }

 private:
  int bin_of(double x) const {
    const double pos = (x - lo()) / delta_;
    if (pos < 0.0 || pos >= static_cast<double>(d_.size())) return -1;
    return static_cast<int>(pos);
  }

  double x1_, delta_, log_renorm_ = 0.0;
  std::vector<double> d_;
  std::vector<double> cum_;  // cum_[i] = mass of bins [0, i)
};

// Grid over [min - 3h, max + 3h] with KDE densities at the bin centers
// (linear-binned Gaussian KDE, the standard fast evaluation; binning error
// is O(delta^2), far below Monte Carlo noise at the default 512 bins).
inline GridDensity grid_from_samples(std::span<const double> samples,
                                     std::span<const double> weights, int n_bins,
                                     std::optional<double> bandwidth = {}) {
  if (n_bins < 8) throw config_error("grid_from_samples: need n_bins >= 8");
  if (samples.size() < 2) throw error("grid_from_samples: need at least two samples");
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples, weights);
  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *mn_it - 3.0 * h;
  const double hi = *mx_it + 3.0 * h;
  const double delta = (hi - lo) / n_bins;

  // Deposit weights onto the grid with linear binning.
  std::vector<double> hist(static_cast<std::size_t>(n_bins), 0.0);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double pos = (samples[s] - lo) / delta - 0.5;  // in center units
    const double w = weights[s] / wsum;
    int i0 = static_cast<int>(std::floor(pos));
    const double frac = pos - i0;
    if (i0 < 0) {
      hist[0] += w;
    } else if (i0 >= n_bins - 1) {
      hist[static_cast<std::size_t>(n_bins) - 1] += w;
    } else {
      hist[static_cast<std::size_t>(i0)] += w * (1.0 - frac);
      hist[static_cast<std::size_t>(i0) + 1] += w * frac;
    }
  }

  // Convolve with the Gaussian kernel sampled at center offsets.
  const int half = std::max(1, static_cast<int>(std::ceil(8.0 * h / delta)));
  std::vector<double> kern(static_cast<std::size_t>(half) + 1);
  for (int k = 0; k <= half; ++k) {
    const double z = k * delta / h;
    kern[static_cast<std::size_t>(k)] =
        std::exp(-0.5 * z * z) / (h * std::sqrt(2.0 * std::numbers::pi));
  }
  std::vector<double> dens(static_cast<std::size_t>(n_bins), 0.0);
  for (int i = 0; i < n_bins; ++i) {
    if (hist[static_cast<std::size_t>(i)] == 0.0) continue;
    const double w = hist[static_cast<std::size_t>(i)];
    const int a = std::max(0, i - half);
    const int b = std::min(n_bins - 1, i + half);
    for (int j = a; j <= b; ++j) {
      dens[static_cast<std::size_t>(j)] += w * kern[static_cast<std::size_t>(std::abs(j - i))];
    }
  }
  return GridDensity(lo + 0.5 * delta, delta, std::move(dens));
}

// ---------------------------------------------------------------------------
// Two-component grid mixture
// ---------------------------------------------------------------------------

// alpha * comp_a + (1 - alpha) * comp_b. Pairing a filter grid with a
// smoother grid this way gives both estimates one common (finite) support,
// which keeps the filter/smoother weight ratios finite.
class MixtureDensity {
 public:
  MixtureDensity(double alpha, GridDensity comp_a, GridDensity comp_b)
      : alpha_(alpha), a_(std::move(comp_a)), b_(std::move(comp_b)) {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw config_error("MixtureDensity: alpha must lie in (0, 1)");
  }

  double density(double x) const {
    const double la = a_.log_density(x);
    const double lb = b_.log_density(x);
    const double da = la == neg_inf ? 0.0 : std::exp(la);
    const double db = lb == neg_inf ? 0.0 : std::exp(lb);
    return alpha_ * da + (1.0 - alpha_) * db;
  }

  double log_density(double x) const {
    const double d = density(x);
    return d > 0.0 ? std::log(d) : neg_inf;
  }

  double cdf(double x) const { return alpha_ * a_.cdf(x) + (1.0 - alpha_) * b_.cdf(x); }

  double sample(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return u < alpha_ ? a_.sample(rng) : b_.sample(rng);
  }

  double alpha() const { return alpha_; }
  const GridDensity& comp_a() const { return a_; }
  const GridDensity& comp_b() const { return b_; }

 private:
  double alpha_;
  GridDensity a_, b_;
};

// Estimated filtering density: alpha_f * filter grid + (1-alpha_f) * smoother grid.
inline MixtureDensity mixture_filter_estimate(const GridDensity& filter_grid,
                                              const GridDensity& smoother_grid,
                                              double alpha_f) {
  return MixtureDensity(alpha_f, filter_grid, smoother_grid);
}

// Estimated smoothing density: alpha_s * smoother grid + (1-alpha_s) * filter grid.
inline MixtureDensity mixture_smoother_estimate(const GridDensity& smoother_grid,
                                                const GridDensity& filter_grid,
                                                double alpha_s) {
  return MixtureDensity(alpha_s, smoother_grid, filter_grid);
}

// ---------------------------------------------------------------------------
// Tagged union
// ---------------------------------------------------------------------------

class DensityEstimate {
 public:
  using Impl = std::variant<NormalFit, WeightedKDE, GridDensity, MixtureDensity>;

  DensityEstimate(NormalFit f) : v_(f) {}
  DensityEstimate(WeightedKDE k) : v_(std::move(k)) {}
  DensityEstimate(GridDensity g) : v_(std::move(g)) {}
  DensityEstimate(MixtureDensity m) : v_(std::move(m)) {}

  double log_density(double x) const {
    return std::visit(
        [x](const auto& d) -> double {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, NormalFit>) {
            return normal_log_pdf(x, d.mean, std::sqrt(d.var));
          } else {
            return d.log_density(x);
          }
        },
        v_);
  }

  double cdf(double x) const {
    return std::visit(
        [x](const auto& d) -> double {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, NormalFit>) {
            return normal_cdf(x, d.mean, std::sqrt(d.var));
          } else {
            return d.cdf(x);
          }
        },
        v_);
  }

  double sample(Rng& rng) const {
    return std::visit(
        [&rng](const auto& d) -> double {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, NormalFit>) {
            return std::normal_distribution<double>(d.mean, std::sqrt(d.var))(rng);
          } else {
            return d.sample(rng);
          }
        },
        v_);
  }

  // Interval outside which the density is exactly zero (grids, truncated
  // KDE kernels) or numerically negligible (normal, +-10 sd).
  std::pair<double, double> support() const {
    return std::visit(
        [](const auto& d) -> std::pair<double, double> {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, NormalFit>) {
            const double sd = std::sqrt(d.var);
            return {d.mean - 10.0 * sd, d.mean + 10.0 * sd};
          } else if constexpr (std::is_same_v<T, WeightedKDE>) {
            return {d.points().front() - 8.0 * d.bandwidth(),
                    d.points().back() + 8.0 * d.bandwidth()};
          } else if constexpr (std::is_same_v<T, GridDensity>) {
            return {d.lo(), d.hi()};
          } else {
            return {std::min(d.comp_a().lo(), d.comp_b().lo()),
                    std::max(d.comp_a().hi(), d.comp_b().hi())};
          }
        },
        v_);
  }

  const Impl& impl() const { return v_; }

 private:
  Impl v_;
};

}  // namespace tps
