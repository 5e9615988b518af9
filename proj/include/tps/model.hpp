#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "tps/common.hpp"
#include "tps/numeric.hpp"

namespace tps {

// Observed series y_0..y_T.
struct ObservationSeq {
  std::vector<double> y;

  int T() const { return static_cast<int>(y.size()) - 1; }
};

// Gaussian transition structure: X_t | X_{t-1}=x ~ N(mean(t, x), sd^2).
// Consumed by the grid oracle, which needs exact cell masses from CDF
// differences rather than density values.
struct GaussianTransition {
  std::function<double(int, double)> mean;  // (t, x_prev)
  double sd = 1.0;
  bool time_varying = false;
};

struct LinearGaussianParams {
  double coeff = 0.8;  // X_t = coeff * X_{t-1} + V_t
  double prior_mean = 0.0;
  double prior_var = 1.0;
  double trans_var = 1.0;
  double emit_var = 1.0;  // Y_t = X_t + W_t
};

// A univariate HMM described by density/sampler callbacks. Immutable after
// construction and safe to share across threads: RNG state is always passed
// in, never stored.
//
// Log-densities return finite values or -inf, never NaN; all weight math
// downstream stays in log space and converts to linear space only inside
// normalisation.
struct ModelSpec {
  int T = 0;
  std::function<double(double)> log_prior;
  std::function<double(Rng&)> sample_prior;
  std::function<double(int, double, double)> log_trans;   // (t, x_prev, x_t)
  std::function<double(int, double, Rng&)> sample_trans;  // (t, x_prev)
  std::function<double(int, double, double)> log_emit;    // (t, x_t, y_t)
  std::function<double(int, double, Rng&)> sample_emit;   // (t, x_t)
  int state_dim = 1;

  // Structure hints. gaussian_* enable exact grid discretisation; `linear`
  // enables the closed-form Kalman/RTS route.
  std::optional<GaussianTransition> gaussian_trans;
  std::optional<std::pair<double, double>> gaussian_prior;  // mean, sd
  std::optional<LinearGaussianParams> linear;
};

// X_0 ~ N(0,1), X_t = 0.8 X_{t-1} + V_t, Y_t = X_t + W_t, V,W ~ N(0,1).
inline ModelSpec linear_gaussian_model(int T) {
  if (T < 0) throw config_error("linear_gaussian_model: T must be >= 0");
  ModelSpec m;
  m.T = T;
  m.log_prior = [](double x) { return normal_log_pdf(x, 0.0, 1.0); };
  m.sample_prior = [](Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
  };
  m.log_trans = [](int, double xp, double x) { return normal_log_pdf(x, 0.8 * xp, 1.0); };
  m.sample_trans = [](int, double xp, Rng& rng) {
    return std::normal_distribution<double>(0.8 * xp, 1.0)(rng);
  };
  m.log_emit = [](int, double x, double y) { return normal_log_pdf(y, x, 1.0); };
  m.sample_emit = [](int, double x, Rng& rng) {
    return std::normal_distribution<double>(x, 1.0)(rng);
  };
  m.gaussian_trans = GaussianTransition{[](int, double x) { return 0.8 * x; }, 1.0, false};
  m.gaussian_prior = std::make_pair(0.0, 1.0);
  m.linear = LinearGaussianParams{};
  return m;
}

inline double nonlinear_drift(int t, double xp) {
  return 0.5 * xp + 25.0 * xp / (1.0 + xp * xp) + 8.0 * std::cos(1.2 * t);
}

// X_0 ~ N(0,1), X_t = X_{t-1}/2 + 25 X_{t-1}/(1+X_{t-1}^2) + 8 cos(1.2 t) + V_t
// with V_t ~ N(0, tau^2); Y_t = X_t^2/20 + W_t with W_t ~ N(0, sigma^2).
// The transition is time-inhomogeneous, so t always reaches the callbacks.
inline ModelSpec nonlinear_benchmark_model(int T, double tau, double sigma) {
  if (T < 0) throw config_error("nonlinear_benchmark_model: T must be >= 0");
  if (!(tau > 0.0) || !(sigma > 0.0))
    throw config_error("nonlinear_benchmark_model: tau and sigma must be positive");
  ModelSpec m;
  m.T = T;
  m.log_prior = [](double x) { return normal_log_pdf(x, 0.0, 1.0); };
  m.sample_prior = [](Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
  };
  m.log_trans = [tau](int t, double xp, double x) {
    return normal_log_pdf(x, nonlinear_drift(t, xp), tau);
  };
  m.sample_trans = [tau](int t, double xp, Rng& rng) {
    return std::normal_distribution<double>(nonlinear_drift(t, xp), tau)(rng);
  };
  m.log_emit = [sigma](int, double x, double y) {
    return normal_log_pdf(y, x * x / 20.0, sigma);
  };
  m.sample_emit = [sigma](int, double x, Rng& rng) {
    return std::normal_distribution<double>(x * x / 20.0, sigma)(rng);
  };
  m.gaussian_trans = GaussianTransition{[](int t, double x) { return nonlinear_drift(t, x); }, tau, true};
  m.gaussian_prior = std::make_pair(0.0, 1.0);
  return m;
}

// Draws one latent trajectory and its observations.
inline std::pair<std::vector<double>, ObservationSeq> simulate(const ModelSpec& m, Rng& rng) {
  std::vector<double> x(static_cast<std::size_t>(m.T) + 1);
  ObservationSeq obs;
  obs.y.resize(x.size());
  x[0] = m.sample_prior(rng);
  obs.y[0] = m.sample_emit(0, x[0], rng);
  for (int t = 1; t <= m.T; ++t) {
    x[t] = m.sample_trans(t, x[t - 1], rng);
    obs.y[t] = m.sample_emit(t, x[t], rng);
  }
  return {std::move(x), std::move(obs)};
}

}  // namespace tps
