#pragma once

// Test-only oracles and helpers: brute-force enumeration for a tiny
// two-state HMM, Simpson quadrature, and replication statistics. These stay
// independent of the library code paths they are used to check.

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tps/tps.hpp"

namespace testsup {

// Simpson rule on [lo, hi]; n must be odd.
inline double integrate(const std::function<double(double)>& f, double lo, double hi,
                        int n = 4001) {
  if (n % 2 == 0) ++n;
  const double h = (hi - lo) / (n - 1);
  double s = f(lo) + f(hi);
  for (int i = 1; i < n - 1; ++i) s += f(lo + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return s * h / 3.0;
}

struct RepStats {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean
};

inline RepStats rep_stats(std::span<const double> v) {
  RepStats out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  const double var = ss / static_cast<double>(v.size() - 1);
  out.se = std::sqrt(var / static_cast<double>(v.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Two-state toy HMM embedded in the real line
// ---------------------------------------------------------------------------
//
// States s in {0, 1} occupy the unit cells [-0.5, 0.5) and [0.5, 1.5); all
// densities are constant within cells (cell width 1), so the continuous
// embedding's cell-membership posteriors equal the discrete posteriors
// exactly, and its likelihood equals the discrete likelihood.
struct ToyHmm {
  std::array<double, 2> p0{0.6, 0.4};
  std::array<std::array<double, 2>, 2> trans{{{0.7, 0.3}, {0.2, 0.8}}};
  std::array<std::array<double, 2>, 2> emit{{{0.8, 0.2}, {0.25, 0.75}}};  // emit[s][y]
  std::vector<int> obs{0, 1, 1, 0};  // y_0..y_T with T = 3

  static int cell(double x) { return x < 0.5 ? 0 : 1; }
  static bool in_support(double x) { return x >= -0.5 && x < 1.5; }

  int T() const { return static_cast<int>(obs.size()) - 1; }

  tps::ObservationSeq observations() const {
    tps::ObservationSeq o;
    for (int y : obs) o.y.push_back(static_cast<double>(y));
    return o;
  }

  tps::ModelSpec model() const {
    tps::ModelSpec m;
    m.T = T();
    const auto p0c = p0;
    const auto trc = trans;
    const auto emc = emit;
    m.log_prior = [p0c](double x) {
      return in_support(x) ? std::log(p0c[static_cast<std::size_t>(cell(x))]) : tps::neg_inf;
    };
    m.sample_prior = [p0c](tps::Rng& rng) {
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      const int s = std::bernoulli_distribution(p0c[1])(rng) ? 1 : 0;
      return s + u(rng);
    };
    m.log_trans = [trc](int, double xp, double x) {
      if (!in_support(xp) || !in_support(x)) return tps::neg_inf;
      return std::log(trc[static_cast<std::size_t>(cell(xp))][static_cast<std::size_t>(cell(x))]);
    };
    m.sample_trans = [trc](int, double xp, tps::Rng& rng) {
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      const auto& row = trc[static_cast<std::size_t>(cell(xp))];
      const int s = std::bernoulli_distribution(row[1])(rng) ? 1 : 0;
      return s + u(rng);
    };
    m.log_emit = [emc](int, double x, double y) {
      if (!in_support(x)) return tps::neg_inf;
      const int yi = y < 0.5 ? 0 : 1;
      return std::log(emc[static_cast<std::size_t>(cell(x))][static_cast<std::size_t>(yi)]);
    };
    m.sample_emit = [emc](int, double x, tps::Rng& rng) {
      const auto& row = emc[static_cast<std::size_t>(cell(x))];
      return std::bernoulli_distribution(row[1])(rng) ? 1.0 : 0.0;
    };
    return m;
  }
};

struct ToyExact {
  double likelihood = 0.0;
  std::vector<std::array<double, 2>> smooth;  // P(s_t = s | y_{0:T})
  std::vector<std::array<double, 2>> filter;  // P(s_t = s | y_{0:t})
  std::vector<double> path_posterior;         // all 2^(T+1) paths, lexicographic
};

// Brute force over every state path.
inline ToyExact enumerate_toy(const ToyHmm& hmm) {
  const int T = hmm.T();
  const int paths = 1 << (T + 1);
  ToyExact out;
  out.smooth.assign(static_cast<std::size_t>(T) + 1, {0.0, 0.0});
  out.path_posterior.assign(static_cast<std::size_t>(paths), 0.0);
  for (int code = 0; code < paths; ++code) {
    double p = 1.0;
    int prev = -1;
    for (int t = 0; t <= T; ++t) {
      const int s = (code >> t) & 1;
      p *= (t == 0) ? hmm.p0[static_cast<std::size_t>(s)]
                    : hmm.trans[static_cast<std::size_t>(prev)][static_cast<std::size_t>(s)];
      p *= hmm.emit[static_cast<std::size_t>(s)][static_cast<std::size_t>(hmm.obs[static_cast<std::size_t>(t)])];
      prev = s;
    }
    out.path_posterior[static_cast<std::size_t>(code)] = p;
    out.likelihood += p;
    for (int t = 0; t <= T; ++t)
      out.smooth[static_cast<std::size_t>(t)][static_cast<std::size_t>((code >> t) & 1)] += p;
  }
  for (auto& m : out.smooth) {
    m[0] /= out.likelihood;
    m[1] /= out.likelihood;
  }
  for (double& p : out.path_posterior) p /= out.likelihood;

  // Filtering marginals by forward recursion.
  out.filter.assign(static_cast<std::size_t>(T) + 1, {0.0, 0.0});
  std::array<double, 2> a{};
  for (int s = 0; s < 2; ++s)
    a[static_cast<std::size_t>(s)] =
        hmm.p0[static_cast<std::size_t>(s)] *
        hmm.emit[static_cast<std::size_t>(s)][static_cast<std::size_t>(hmm.obs[0])];
  for (int t = 0;; ++t) {
    const double z = a[0] + a[1];
    out.filter[static_cast<std::size_t>(t)] = {a[0] / z, a[1] / z};
    if (t == T) break;
    std::array<double, 2> b{};
    for (int s = 0; s < 2; ++s)
      for (int sp = 0; sp < 2; ++sp)
        b[static_cast<std::size_t>(s)] +=
            a[static_cast<std::size_t>(sp)] *
            hmm.trans[static_cast<std::size_t>(sp)][static_cast<std::size_t>(s)] *
            hmm.emit[static_cast<std::size_t>(s)][static_cast<std::size_t>(hmm.obs[static_cast<std::size_t>(t) + 1])];
    a = b;
  }
  return out;
}

// Unit-cell grid estimate pinned to the toy cells: sampling and evaluation
// are exact for the embedding.
inline tps::GridDensity toy_cell_grid(const std::array<double, 2>& pmf) {
  return tps::GridDensity(0.0, 1.0, {pmf[0], pmf[1]});
}

// Fraction of weighted samples landing in cell 1.
inline double cell1_mass(std::span<const double> xs, std::span<const double> probs) {
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (ToyHmm::cell(xs[i]) == 1) s += probs[i];
  return s;
}

}  // namespace testsup
