#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "tps/common.hpp"
#include "tps/model.hpp"
#include "tps/numeric.hpp"
#include "tps/resampling.hpp"
#include "tps/smoother.hpp"

namespace tps {

// Per-step post-resample particle sets of a bootstrap filter, plus the
// ancestry needed to reconstruct full particle paths.
struct FilterOutput {
  int n = 0;
  int T = 0;
  std::vector<std::vector<double>> particles;    // (T+1) x n, post-resample
  std::vector<std::vector<double>> log_weights;  // normalised log-weights per step
  std::vector<std::vector<int>> ancestors;       // (T+1) x n when keep_paths
  bool has_paths = false;
  double log_likelihood = 0.0;
};

// Standard bootstrap filter: transition proposal, emission weight, resample
// every step. With keep_paths the genealogy gives the BPF joint-smoothing
// baseline (subject to path degeneracy).
inline FilterOutput bootstrap_pf(const ModelSpec& model, const ObservationSeq& obs, int n,
                                 bool keep_paths, ResampleScheme scheme, Rng& rng) {
  if (n < 2) throw config_error("bootstrap_pf: need at least two particles");
  if (obs.T() != model.T)
    throw config_error("bootstrap_pf: observation length does not match model horizon");
  FilterOutput out;
  out.n = n;
  out.T = model.T;
  out.has_paths = keep_paths;
  out.particles.resize(static_cast<std::size_t>(model.T) + 1);
  out.log_weights.resize(static_cast<std::size_t>(model.T) + 1);
  if (keep_paths) out.ancestors.resize(static_cast<std::size_t>(model.T) + 1);

  std::vector<double> cur(static_cast<std::size_t>(n));
  std::vector<double> logw(static_cast<std::size_t>(n));
  std::vector<double> prev;
  for (int t = 0; t <= model.T; ++t) {
    for (int i = 0; i < n; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      cur[ii] = (t == 0) ? model.sample_prior(rng) : model.sample_trans(t, prev[ii], rng);
      logw[ii] = model.log_emit(t, cur[ii], obs.y[static_cast<std::size_t>(t)]);
    }
    NormalizedWeights nw;
    try {
      nw = normalize(logw);
    } catch (const degenerate_error&) {
      std::ostringstream msg;
      msg << "bootstrap_pf: all emission weights vanished at step " << t;
      throw degenerate_error(msg.str());
    }
    out.log_likelihood += nw.log_normalizer;
    const std::vector<int> idx = resample(nw.probs, n, scheme, rng);
    auto& stored = out.particles[static_cast<std::size_t>(t)];
    stored.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      stored[static_cast<std::size_t>(i)] = cur[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    out.log_weights[static_cast<std::size_t>(t)]
        .assign(static_cast<std::size_t>(n), -std::log(static_cast<double>(n)));
    if (keep_paths) out.ancestors[static_cast<std::size_t>(t)] = idx;
    prev = stored;
  }
  return out;
}

// Reconstructs the surviving ancestral paths: column t of the result holds
// the time-t values of the i-th final-generation particle's lineage.
inline std::vector<std::vector<double>> pf_paths(const FilterOutput& fo) {
  if (!fo.has_paths) throw error("pf_paths: filter was run without keep_paths");
  std::vector<std::vector<double>> path(static_cast<std::size_t>(fo.T) + 1,
                                        std::vector<double>(static_cast<std::size_t>(fo.n)));
  std::vector<int> trace(static_cast<std::size_t>(fo.n));
  for (int i = 0; i < fo.n; ++i) trace[static_cast<std::size_t>(i)] = i;
  for (int t = fo.T; t >= 0; --t) {
    for (int i = 0; i < fo.n; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      path[static_cast<std::size_t>(t)][ii] =
          fo.particles[static_cast<std::size_t>(t)][static_cast<std::size_t>(trace[ii])];
      if (t > 0)
        trace[ii] = fo.ancestors[static_cast<std::size_t>(t)][static_cast<std::size_t>(trace[ii])];
    }
  }
  return path;
}

// Count of distinct time-0 ancestors among the final particles; shrinks as
// T grows (path degeneracy witness).
inline int unique_ancestor_count(const FilterOutput& fo) {
  if (!fo.has_paths) throw error("unique_ancestor_count: filter was run without keep_paths");
  std::vector<int> trace(static_cast<std::size_t>(fo.n));
  for (int i = 0; i < fo.n; ++i) trace[static_cast<std::size_t>(i)] = i;
  for (int t = fo.T; t >= 1; --t)
    for (int i = 0; i < fo.n; ++i)
      trace[static_cast<std::size_t>(i)] =
          fo.ancestors[static_cast<std::size_t>(t)][static_cast<std::size_t>(trace[static_cast<std::size_t>(i)])];
  std::vector<int> uniq = trace;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  return static_cast<int>(uniq.size());
}

// Forward-filtering backward-smoothing: reweighs the stored filter particles
// to marginal-smoothing weights,
//   w_{t|T}(i) = w_t(i) sum_j w_{t+1|T}(j) p(x_{t+1}(j)|x_t(i)) / c_j,
//   c_j = sum_l w_t(l) p(x_{t+1}(j)|x_t(l)).
// O(N^2) per step. Returns normalised log-weights per step.
inline std::vector<std::vector<double>> ffbsm(const FilterOutput& fo, const ModelSpec& model) {
  const int n = fo.n;
  std::vector<std::vector<double>> sw(static_cast<std::size_t>(fo.T) + 1);
  sw[static_cast<std::size_t>(fo.T)] = fo.log_weights[static_cast<std::size_t>(fo.T)];
  std::vector<double> denom(static_cast<std::size_t>(n));
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (int t = fo.T - 1; t >= 0; --t) {
    const auto& xt = fo.particles[static_cast<std::size_t>(t)];
    const auto& xn = fo.particles[static_cast<std::size_t>(t) + 1];
    const auto& lwt = fo.log_weights[static_cast<std::size_t>(t)];
    const auto& swn = sw[static_cast<std::size_t>(t) + 1];
    for (int jj = 0; jj < n; ++jj) {
      for (int ll = 0; ll < n; ++ll)
        terms[static_cast<std::size_t>(ll)] =
            lwt[static_cast<std::size_t>(ll)] +
            model.log_trans(t + 1, xt[static_cast<std::size_t>(ll)], xn[static_cast<std::size_t>(jj)]);
      denom[static_cast<std::size_t>(jj)] = log_sum_exp(terms);
      if (denom[static_cast<std::size_t>(jj)] == neg_inf &&
          swn[static_cast<std::size_t>(jj)] != neg_inf) {
        std::ostringstream msg;
        msg << "ffbsm: zero backward denominator at step " << t + 1;
        throw degenerate_error(msg.str());
      }
    }
    auto& cur = sw[static_cast<std::size_t>(t)];
    cur.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      for (int jj = 0; jj < n; ++jj) {
        const double d = denom[static_cast<std::size_t>(jj)];
        terms[static_cast<std::size_t>(jj)] =
            (d == neg_inf)
                ? neg_inf
                : swn[static_cast<std::size_t>(jj)] +
                      model.log_trans(t + 1, xt[static_cast<std::size_t>(i)],
                                      xn[static_cast<std::size_t>(jj)]) -
                      d;
      }
      cur[static_cast<std::size_t>(i)] = lwt[static_cast<std::size_t>(i)] + log_sum_exp(terms);
    }
    const double lse = log_sum_exp(cur);
    if (lse == neg_inf) throw degenerate_error("ffbsm: smoothing weights vanished");
    for (double& v : cur) v -= lse;
  }
  return sw;
}

// Forward-filtering backward-simulation: exact categorical backward draws,
// O(N) per draw per step. Returns equal-weight joint-smoothing paths.
inline WeightedPath ffbsi(const FilterOutput& fo, const ModelSpec& model, int n_draws,
                          Rng& rng) {
  const int n = fo.n;
  WeightedPath out{0, fo.T, n_draws};
  out.states.resize(static_cast<std::size_t>(n_draws) * (static_cast<std::size_t>(fo.T) + 1));
  out.log_weights.assign(static_cast<std::size_t>(n_draws), 0.0);
  std::vector<double> logp(static_cast<std::size_t>(n));
  for (int d = 0; d < n_draws; ++d) {
    NormalizedWeights nw = normalize(fo.log_weights[static_cast<std::size_t>(fo.T)]);
    int pick = resample(nw.probs, 1, ResampleScheme::multinomial, rng)[0];
    out.state(d, fo.T) = fo.particles[static_cast<std::size_t>(fo.T)][static_cast<std::size_t>(pick)];
    for (int t = fo.T - 1; t >= 0; --t) {
      const auto& xt = fo.particles[static_cast<std::size_t>(t)];
      const auto& lwt = fo.log_weights[static_cast<std::size_t>(t)];
      const double next = out.state(d, t + 1);
      for (int i = 0; i < n; ++i)
        logp[static_cast<std::size_t>(i)] =
            lwt[static_cast<std::size_t>(i)] +
            model.log_trans(t + 1, xt[static_cast<std::size_t>(i)], next);
      NormalizedWeights bw;
      try {
        bw = normalize(logp);
      } catch (const degenerate_error&) {
        std::ostringstream msg;
        msg << "ffbsi: zero backward weights at step " << t;
        throw degenerate_error(msg.str());
      }
      pick = resample(bw.probs, 1, ResampleScheme::multinomial, rng)[0];
      out.state(d, t) = xt[static_cast<std::size_t>(pick)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form Kalman filter / RTS smoother (linear Gaussian models)
// ---------------------------------------------------------------------------

struct GaussianBelief {
  std::vector<double> mean;
  std::vector<double> var;
};

struct KalmanResult {
  GaussianBelief filter;
  GaussianBelief predicted;  // one-step-ahead prior per step
  double log_likelihood = 0.0;
};

inline KalmanResult kalman_filter(const LinearGaussianParams& p, const ObservationSeq& obs) {
  const int T = obs.T();
  KalmanResult out;
  out.filter.mean.resize(static_cast<std::size_t>(T) + 1);
  out.filter.var.resize(static_cast<std::size_t>(T) + 1);
  out.predicted.mean.resize(static_cast<std::size_t>(T) + 1);
  out.predicted.var.resize(static_cast<std::size_t>(T) + 1);
  double m = p.prior_mean, v = p.prior_var;
  for (int t = 0; t <= T; ++t) {
    if (t > 0) {
      m = p.coeff * out.filter.mean[static_cast<std::size_t>(t) - 1];
      v = p.coeff * p.coeff * out.filter.var[static_cast<std::size_t>(t) - 1] + p.trans_var;
    }
    out.predicted.mean[static_cast<std::size_t>(t)] = m;
    out.predicted.var[static_cast<std::size_t>(t)] = v;
    const double s = v + p.emit_var;
    const double gain = v / s;
    const double innov = obs.y[static_cast<std::size_t>(t)] - m;
    out.log_likelihood += normal_log_pdf(obs.y[static_cast<std::size_t>(t)], m, std::sqrt(s));
    out.filter.mean[static_cast<std::size_t>(t)] = m + gain * innov;
    out.filter.var[static_cast<std::size_t>(t)] = (1.0 - gain) * v;
  }
  return out;
}

inline GaussianBelief rts_smoother(const LinearGaussianParams& p, const ObservationSeq& obs) {
  const KalmanResult kf = kalman_filter(p, obs);
  const int T = obs.T();
  GaussianBelief out;
  out.mean = kf.filter.mean;
  out.var = kf.filter.var;
  for (int t = T - 1; t >= 0; --t) {
    const std::size_t tt = static_cast<std::size_t>(t);
    const double gain = kf.filter.var[tt] * p.coeff / kf.predicted.var[tt + 1];
    out.mean[tt] = kf.filter.mean[tt] + gain * (out.mean[tt + 1] - kf.predicted.mean[tt + 1]);
    out.var[tt] = kf.filter.var[tt] + gain * gain * (out.var[tt + 1] - kf.predicted.var[tt + 1]);
  }
  return out;
}

inline GaussianBelief rts_smoother(const ModelSpec& model, const ObservationSeq& obs) {
  if (!model.linear)
    throw unsupported_error("rts_smoother: model is not linear Gaussian");
  return rts_smoother(*model.linear, obs);
}

}  // namespace tps
