#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tps/common.hpp"
#include "tps/numeric.hpp"

namespace tps {

struct NormalizedWeights {
  std::vector<double> probs;  // sum to 1
  double log_normalizer = 0;  // log of the mean unnormalised weight
};

// Log-sum-exp normalisation. log_normalizer is logsumexp(w) - log N, i.e.
// the log mean weight: with children entering a merge at uniform weight,
// the product of these over all merges estimates the normalising constant.
inline NormalizedWeights normalize(std::span<const double> logw) {
  if (logw.empty()) throw degenerate_error("normalize: empty weight vector");
  const double lse = log_sum_exp(logw);
  if (lse == neg_inf) throw degenerate_error("normalize: all weights are zero");
  NormalizedWeights out;
  out.probs.resize(logw.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    out.probs[i] = std::exp(logw[i] - lse);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;  // kill rounding drift
  out.log_normalizer = lse - std::log(static_cast<double>(logw.size()));
  return out;
}

// Effective sample size 1 / sum w_i^2 of normalised weights.
inline double ess(std::span<const double> probs) {
  double s2 = 0.0;
  for (double p : probs) s2 += p * p;
  return 1.0 / s2;
}

enum class ResampleScheme { systematic, residual, multinomial };

inline ResampleScheme parse_resample_scheme(const std::string& s) {
  if (s == "systematic") return ResampleScheme::systematic;
  if (s == "residual") return ResampleScheme::residual;
  if (s == "multinomial") return ResampleScheme::multinomial;
  throw config_error("unknown resampling scheme: " + s);
}

inline const char* to_string(ResampleScheme s) {
  switch (s) {
    case ResampleScheme::systematic: return "systematic";
    case ResampleScheme::residual: return "residual";
    case ResampleScheme::multinomial: return "multinomial";
  }
  return "?";
}

namespace detail {

inline void systematic_indices(std::span<const double> probs, int n_out, Rng& rng,
                               std::vector<int>& out) {
  const double u0 = std::uniform_real_distribution<double>(0.0, 1.0)(rng) / n_out;
  int i = 0;
  double cum = probs[0];
  for (int k = 0; k < n_out; ++k) {
    const double pos = u0 + static_cast<double>(k) / n_out;
    while (cum < pos && i + 1 < static_cast<int>(probs.size())) cum += probs[++i];
    out.push_back(i);
  }
}

inline void multinomial_indices(std::span<const double> probs, int n_out, Rng& rng,
                                std::vector<int>& out) {
  std::vector<double> cdf(probs.size());
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    cdf[i] = cum;
  }
  cdf.back() = 1.0;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < n_out; ++k) {
    const double u = unif(rng);
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    out.push_back(static_cast<int>(it - cdf.begin()));
  }
}

}  // namespace detail

// Draws n_out ancestor indices from normalised weights; the resulting
// particle set carries equal weights 1/n_out.
inline std::vector<int> resample(std::span<const double> probs, int n_out,
                                 ResampleScheme scheme, Rng& rng) {
  std::vector<int> out;
  out.reserve(n_out);
  switch (scheme) {
    case ResampleScheme::systematic:
      detail::systematic_indices(probs, n_out, rng, out);
      break;
    case ResampleScheme::multinomial:
      detail::multinomial_indices(probs, n_out, rng, out);
      break;
    case ResampleScheme::residual: {
      std::vector<double> residual(probs.size());
      int assigned = 0;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const int copies = static_cast<int>(std::floor(probs[i] * n_out));
        for (int c = 0; c < copies; ++c) out.push_back(static_cast<int>(i));
        assigned += copies;
        residual[i] = probs[i] * n_out - copies;
      }
      const int rest = n_out - assigned;
      if (rest > 0) {
        double rsum = 0.0;
        for (double& r : residual) rsum += r;
        for (double& r : residual) r /= rsum;
        detail::multinomial_indices(residual, rest, rng, out);
      }
      break;
    }
  }
  return out;
}

}  // namespace tps
