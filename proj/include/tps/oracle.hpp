#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "tps/common.hpp"
#include "tps/model.hpp"
#include "tps/numeric.hpp"

namespace tps {

// Discrete analogue of a Gaussian-structured HMM on a uniform state grid.
// Cell transition masses come from Gaussian CDF differences at the cell
// edges (row-stochastic by construction, exact for Gaussian noise);
// emissions are evaluated at the cell centers.
//
// Transition rows are not materialised per step: for T = 511, m = 2000 that
// would be ~16 GB. Time-homogeneous models cache one dense matrix; the
// inhomogeneous case regenerates rows on demand. Small hand-built models can
// supply dense per-step matrices directly.
class DiscreteHMM {
 public:
  // Hand-built dense model (e.g. exact small test cases). log_trans_steps
  // holds T row-major m x m matrices in log space, log_trans_steps[t-1]
  // governing the step into time t.
  DiscreteHMM(std::vector<double> grid, std::vector<double> log_prior,
              std::vector<std::vector<double>> log_trans_steps,
              std::vector<std::vector<double>> log_emit)
      : grid_(std::move(grid)),
        log_prior_(std::move(log_prior)),
        log_emit_(std::move(log_emit)),
        dense_steps_(std::move(log_trans_steps)) {
    m_ = static_cast<int>(grid_.size());
    T_ = static_cast<int>(log_emit_.size()) - 1;
    delta_ = m_ > 1 ? grid_[1] - grid_[0] : 1.0;
    if (static_cast<int>(dense_steps_.size()) != T_)
      throw error("DiscreteHMM: need one transition matrix per step 1..T");
    normalize_log_pmf(log_prior_);
    for (auto& mat : dense_steps_) {
      if (static_cast<int>(mat.size()) != m_ * m_)
        throw error("DiscreteHMM: transition matrix dimension mismatch");
      for (int i = 0; i < m_; ++i) {
        std::span<double> row(mat.data() + static_cast<std::size_t>(i) * m_,
                              static_cast<std::size_t>(m_));
        normalize_log_pmf(row);
      }
    }
  }

  // Grid discretisation of a ModelSpec carrying Gaussian hints.
  static DiscreteHMM discretize(const ModelSpec& model, const ObservationSeq& obs, int m,
                                std::pair<double, double> range, int threads = 1) {
    if (m < 16) throw config_error("discretize: need at least 16 grid cells");
    if (!(range.first < range.second)) throw config_error("discretize: empty range");
    if (!model.gaussian_trans || !model.gaussian_prior)
      throw unsupported_error("discretize: model carries no Gaussian structure hints");

    DiscreteHMM d;
    d.m_ = m;
    d.T_ = model.T;
    d.lo_ = range.first;
    d.delta_ = (range.second - range.first) / m;
    d.grid_.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) d.grid_[static_cast<std::size_t>(i)] = d.lo_ + (i + 0.5) * d.delta_;
    d.gauss_ = model.gaussian_trans;

    // Prior cell masses from CDF differences.
    const auto [pm, ps] = *model.gaussian_prior;
    d.log_prior_.resize(static_cast<std::size_t>(m));
    double prior_in = 0.0;
    for (int i = 0; i < m; ++i) {
      const double a = normal_cdf(d.lo_ + i * d.delta_, pm, ps);
      const double b = normal_cdf(d.lo_ + (i + 1) * d.delta_, pm, ps);
      const double mass = std::max(b - a, 0.0);
      prior_in += mass;
      d.log_prior_[static_cast<std::size_t>(i)] = mass > 0.0 ? std::log(mass) : neg_inf;
    }
    double leak = 1.0 - prior_in;

    // Emissions at centers.
    d.log_emit_.resize(static_cast<std::size_t>(model.T) + 1);
    for (int t = 0; t <= model.T; ++t) {
      auto& row = d.log_emit_[static_cast<std::size_t>(t)];
      row.resize(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        row[static_cast<std::size_t>(i)] =
            model.log_emit(t, d.grid_[static_cast<std::size_t>(i)], obs.y[static_cast<std::size_t>(t)]);
    }

    // Cheap boundary scan: two CDF evaluations per (t, source cell).
    leak = std::max(leak, boundary_leak(model, range, threads));
    d.max_boundary_leak_ = leak;
    if (leak > 1e-6) {
      const double width = range.second - range.first;
      std::ostringstream msg;
      msg << "discretize: range (" << range.first << ", " << range.second
          << ") too small, boundary mass " << leak << "; suggest ("
          << range.first - 0.25 * width << ", " << range.second + 0.25 * width << ")";
      warn(msg.str());
    }

    d.normalize_log_pmf(d.log_prior_);
    if (!model.gaussian_trans->time_varying) {
      // One matrix serves every step.
      d.homo_rows_.resize(static_cast<std::size_t>(m) * m);
      parallel_for_index(static_cast<std::size_t>(m), threads, [&](std::size_t i) {
        d.gaussian_row(0 + 1, static_cast<int>(i),
                       std::span<double>(d.homo_rows_.data() + i * static_cast<std::size_t>(m),
                                         static_cast<std::size_t>(m)));
      });
    }
    return d;
  }

  // Largest probability mass escaping the range across the prior and every
  // (t, source cell) transition; O(T m) CDF evaluations.
  static double boundary_leak(const ModelSpec& model, std::pair<double, double> range,
                              int threads = 1) {
    if (!model.gaussian_trans || !model.gaussian_prior)
      throw unsupported_error("boundary_leak: model carries no Gaussian structure hints");
    const auto& gt = *model.gaussian_trans;
    const auto [pm, ps] = *model.gaussian_prior;
    double leak = normal_cdf(range.first, pm, ps) + 1.0 - normal_cdf(range.second, pm, ps);
    // Source points sampled at a fixed sub-grid; the drift is smooth, so a
    // few hundred probes per step bound the leak tightly.
    const int probes = 512;
    const int steps = gt.time_varying ? model.T : 1;
    const auto partials = parallel_map_chunks<double>(
        static_cast<std::size_t>(steps), threads, [&](std::size_t begin, std::size_t end) {
          double local = 0.0;
          for (std::size_t s = begin; s < end; ++s) {
            const int t = static_cast<int>(s) + 1;
            for (int q = 0; q < probes; ++q) {
              const double x = range.first + (q + 0.5) * (range.second - range.first) / probes;
              const double mu = gt.mean(t, x);
              local = std::max(local, normal_cdf(range.first, mu, gt.sd) + 1.0 -
                                          normal_cdf(range.second, mu, gt.sd));
            }
          }
          return local;
        });
    for (double p : partials) leak = std::max(leak, p);
    return leak;
  }

  int m() const { return m_; }
  int T() const { return T_; }
  double delta() const { return delta_; }
  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& log_prior() const { return log_prior_; }
  const std::vector<std::vector<double>>& log_emit() const { return log_emit_; }
  double max_boundary_leak() const { return max_boundary_leak_; }

  // Row i of P(X_t = . | X_{t-1} = cell i) in linear space, summing to 1.
  void transition_row(int t, int i, std::span<double> out) const {
    if (!dense_steps_.empty()) {
      const auto& mat = dense_steps_[static_cast<std::size_t>(t) - 1];
      for (int jj = 0; jj < m_; ++jj) {
        const double lv = mat[static_cast<std::size_t>(i) * m_ + static_cast<std::size_t>(jj)];
        out[static_cast<std::size_t>(jj)] = lv == neg_inf ? 0.0 : std::exp(lv);
      }
      return;
    }
    if (!homo_rows_.empty()) {
      const double* src = homo_rows_.data() + static_cast<std::size_t>(i) * m_;
      std::copy(src, src + m_, out.begin());
      return;
    }
    gaussian_row(t, i, out);
  }

 private:
  DiscreteHMM() = default;

  template <typename Span>
  void normalize_log_pmf(Span& row) {
    const double lse = log_sum_exp(std::span<const double>(row.data(), row.size()));
    if (lse == neg_inf) throw degenerate_error("DiscreteHMM: empty pmf row");
    for (std::size_t i = 0; i < row.size(); ++i)
      if (row[i] != neg_inf) row[i] -= lse;
  }

  void gaussian_row(int t, int i, std::span<double> out) const {
    const double mu = gauss_->mean(t, grid_[static_cast<std::size_t>(i)]);
    const double sd = gauss_->sd;
    // Cells beyond 8.5 sd carry < 1e-16 of the row; skip them.
    const double wlo = mu - 8.5 * sd, whi = mu + 8.5 * sd;
    int a = static_cast<int>(std::floor((wlo - lo_) / delta_));
    int b = static_cast<int>(std::ceil((whi - lo_) / delta_));
    a = std::max(a, 0);
    b = std::min(b, m_);
    std::fill(out.begin(), out.end(), 0.0);
    if (a >= b) {
      // Whole window outside the range: dump the row into the nearest cell
      // so it stays stochastic (leak was already reported at build time).
      out[static_cast<std::size_t>(mu < lo_ ? 0 : m_ - 1)] = 1.0;
      return;
    }
    double prev = normal_cdf(lo_ + a * delta_, mu, sd);
    double sum = 0.0;
    for (int jj = a; jj < b; ++jj) {
      const double next = normal_cdf(lo_ + (jj + 1) * delta_, mu, sd);
      const double mass = std::max(next - prev, 0.0);
      out[static_cast<std::size_t>(jj)] = mass;
      sum += mass;
      prev = next;
    }
    if (sum <= 0.0) {
      out[static_cast<std::size_t>(std::clamp(
          static_cast<int>((mu - lo_) / delta_), 0, m_ - 1))] = 1.0;
      return;
    }
    const double inv = 1.0 / sum;
    for (int jj = a; jj < b; ++jj) out[static_cast<std::size_t>(jj)] *= inv;
  }

  int m_ = 0, T_ = 0;
  double lo_ = 0.0, delta_ = 1.0;
  double max_boundary_leak_ = 0.0;
  std::vector<double> grid_;
  std::vector<double> log_prior_;
  std::vector<std::vector<double>> log_emit_;
  std::vector<std::vector<double>> dense_steps_;  // hand-built models
  std::vector<double> homo_rows_;                 // cached homogeneous matrix
  std::optional<GaussianTransition> gauss_;
};

// Extends the range by 25% per side until the boundary scan passes, then
// discretises.
inline DiscreteHMM discretize_auto(const ModelSpec& model, const ObservationSeq& obs, int m,
                                   std::pair<double, double> initial_range, int threads = 1) {
  std::pair<double, double> range = initial_range;
  for (int it = 0; it < 16; ++it) {
    if (DiscreteHMM::boundary_leak(model, range, threads) <= 1e-6)
      return DiscreteHMM::discretize(model, obs, m, range, threads);
    const double width = range.second - range.first;
    range.first -= 0.25 * width;
    range.second += 0.25 * width;
  }
  throw degenerate_error("discretize_auto: range extension did not converge");
}

// Exact smoothing solution of a DiscreteHMM: per-step pmfs, moments and
// CDFs. Ground truth for the nonlinear benchmark metrics.
struct OracleSolution {
  std::vector<double> grid;
  double delta = 1.0;
  std::vector<std::vector<double>> filter_pmf;  // (T+1) x m
  std::vector<std::vector<double>> smooth_pmf;  // (T+1) x m
  std::vector<std::vector<double>> smooth_cdf;  // prefix sums over cells
  std::vector<double> mean, var;                // smoothing moments
  double log_likelihood = 0.0;           // forward pass
  double log_likelihood_backward = 0.0;  // independent backward route

  // Step CDF of the discrete distribution: P(X <= x) with jumps at centers.
  double cdf(int t, double x) const {
    const auto& g = grid;
    const auto it = std::upper_bound(g.begin(), g.end(), x);
    const std::size_t k = static_cast<std::size_t>(it - g.begin());
    if (k == 0) return 0.0;
    return smooth_cdf[static_cast<std::size_t>(t)][k - 1];
  }

  double filter_cdf(int t, double x) const {
    const auto& g = grid;
    const auto it = std::upper_bound(g.begin(), g.end(), x);
    std::size_t k = static_cast<std::size_t>(it - g.begin());
    double c = 0.0;
    const auto& pmf = filter_pmf[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < k; ++i) c += pmf[i];
    return std::min(c, 1.0);
  }
};

// Scaled forward-backward. Transition rows are generated twice (forward and
// backward sweep); per-step scaling keeps everything in linear space.
inline OracleSolution forward_backward(const DiscreteHMM& d, int threads = 1) {
  const int m = d.m(), T = d.T();
  OracleSolution sol;
  sol.grid = d.grid();
  sol.delta = d.delta();
  sol.filter_pmf.assign(static_cast<std::size_t>(T) + 1,
                        std::vector<double>(static_cast<std::size_t>(m)));
  sol.smooth_pmf = sol.filter_pmf;

  // Emission factors, max-shifted per step.
  std::vector<std::vector<double>> emis(static_cast<std::size_t>(T) + 1,
                                        std::vector<double>(static_cast<std::size_t>(m)));
  std::vector<double> emis_shift(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    const auto& le = d.log_emit()[static_cast<std::size_t>(t)];
    double mx = neg_inf;
    for (double v : le) mx = std::max(mx, v);
    if (mx == neg_inf) {
      std::ostringstream msg;
      msg << "forward_backward: impossible observation at step " << t;
      throw degenerate_error(msg.str());
    }
    emis_shift[static_cast<std::size_t>(t)] = mx;
    for (int i = 0; i < m; ++i)
      emis[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] =
          le[static_cast<std::size_t>(i)] == neg_inf
              ? 0.0
              : std::exp(le[static_cast<std::size_t>(i)] - mx);
  }

  auto scale_step = [&](std::vector<double>& v, int t) {
    double sum = 0.0;
    for (double x : v) sum += x;
    if (!(sum > 0.0)) {
      std::ostringstream msg;
      msg << "forward_backward: impossible observation at step " << t;
      throw degenerate_error(msg.str());
    }
    for (double& x : v) x /= sum;
    return sum;
  };

  // Forward pass.
  std::vector<double> alpha(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double lp = d.log_prior()[static_cast<std::size_t>(i)];
    alpha[static_cast<std::size_t>(i)] =
        (lp == neg_inf ? 0.0 : std::exp(lp)) * emis[0][static_cast<std::size_t>(i)];
  }
  sol.log_likelihood = std::log(scale_step(alpha, 0)) + emis_shift[0];
  sol.filter_pmf[0] = alpha;

  for (int t = 1; t <= T; ++t) {
    // alpha_new(j) = e_t(j) sum_i alpha(i) M_t(i, j); rows are chunked over
    // i with a fixed grid so the reduction is thread-count independent.
    auto partials = parallel_map_chunks<std::vector<double>>(
        static_cast<std::size_t>(m), threads,
        [&](std::size_t begin, std::size_t end) {
          std::vector<double> acc(static_cast<std::size_t>(m), 0.0);
          std::vector<double> row(static_cast<std::size_t>(m));
          for (std::size_t i = begin; i < end; ++i) {
            const double a = alpha[i];
            if (a == 0.0) continue;
            d.transition_row(t, static_cast<int>(i), row);
            for (int jj = 0; jj < m; ++jj) acc[static_cast<std::size_t>(jj)] += a * row[static_cast<std::size_t>(jj)];
          }
          return acc;
        });
    std::vector<double> next(static_cast<std::size_t>(m), 0.0);
    for (const auto& acc : partials)
      for (int jj = 0; jj < m; ++jj) next[static_cast<std::size_t>(jj)] += acc[static_cast<std::size_t>(jj)];
    for (int jj = 0; jj < m; ++jj) next[static_cast<std::size_t>(jj)] *= emis[static_cast<std::size_t>(t)][static_cast<std::size_t>(jj)];
    sol.log_likelihood += std::log(scale_step(next, t)) + emis_shift[static_cast<std::size_t>(t)];
    sol.filter_pmf[static_cast<std::size_t>(t)] = next;
    alpha.swap(next);
  }

  // Backward pass.
  std::vector<double> beta(static_cast<std::size_t>(m), 1.0);
  double log_scale = 0.0;
  sol.smooth_pmf[static_cast<std::size_t>(T)] = sol.filter_pmf[static_cast<std::size_t>(T)];
  for (int t = T - 1; t >= 0; --t) {
    std::vector<double> v(static_cast<std::size_t>(m));
    for (int jj = 0; jj < m; ++jj)
      v[static_cast<std::size_t>(jj)] =
          emis[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(jj)] * beta[static_cast<std::size_t>(jj)];
    auto partials = parallel_map_chunks<std::vector<double>>(
        static_cast<std::size_t>(m), threads,
        [&](std::size_t begin, std::size_t end) {
          std::vector<double> out(end - begin);
          std::vector<double> row(static_cast<std::size_t>(m));
          for (std::size_t i = begin; i < end; ++i) {
            d.transition_row(t + 1, static_cast<int>(i), row);
            double s = 0.0;
            for (int jj = 0; jj < m; ++jj) s += row[static_cast<std::size_t>(jj)] * v[static_cast<std::size_t>(jj)];
            out[i - begin] = s;
          }
          return out;
        });
    std::vector<double> next;
    next.reserve(static_cast<std::size_t>(m));
    for (auto& part : partials) next.insert(next.end(), part.begin(), part.end());
    log_scale += std::log(scale_step(next, t)) + emis_shift[static_cast<std::size_t>(t) + 1];
    beta.swap(next);

    auto& sm = sol.smooth_pmf[static_cast<std::size_t>(t)];
    for (int i = 0; i < m; ++i)
      sm[static_cast<std::size_t>(i)] =
          sol.filter_pmf[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] * beta[static_cast<std::size_t>(i)];
    scale_step(sm, t);
  }

  // Backward-route likelihood: sum_i prior_i e_0(i) beta_0(i).
  {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      const double lp = d.log_prior()[static_cast<std::size_t>(i)];
      if (lp == neg_inf) continue;
      s += std::exp(lp) * emis[0][static_cast<std::size_t>(i)] * beta[static_cast<std::size_t>(i)];
    }
    sol.log_likelihood_backward = std::log(s) + emis_shift[0] + log_scale;
  }

  // Moments and CDF prefix sums.
  sol.mean.resize(static_cast<std::size_t>(T) + 1);
  sol.var.resize(static_cast<std::size_t>(T) + 1);
  sol.smooth_cdf.assign(static_cast<std::size_t>(T) + 1,
                        std::vector<double>(static_cast<std::size_t>(m)));
  for (int t = 0; t <= T; ++t) {
    const auto& pmf = sol.smooth_pmf[static_cast<std::size_t>(t)];
    double mean = 0.0;
    for (int i = 0; i < m; ++i) mean += pmf[static_cast<std::size_t>(i)] * sol.grid[static_cast<std::size_t>(i)];
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      const double dx = sol.grid[static_cast<std::size_t>(i)] - mean;
      var += pmf[static_cast<std::size_t>(i)] * dx * dx;
    }
    sol.mean[static_cast<std::size_t>(t)] = mean;
    sol.var[static_cast<std::size_t>(t)] = var;
    double cum = 0.0;
    auto& cdf = sol.smooth_cdf[static_cast<std::size_t>(t)];
    for (int i = 0; i < m; ++i) {
      cum += pmf[static_cast<std::size_t>(i)];
      cdf[static_cast<std::size_t>(i)] = std::min(cum, 1.0);
    }
    cdf.back() = 1.0;
  }
  return sol;
}

}  // namespace tps
