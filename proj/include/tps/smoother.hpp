#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tps/common.hpp"
#include "tps/density.hpp"
#include "tps/model.hpp"
#include "tps/numeric.hpp"
#include "tps/resampling.hpp"
#include "tps/tree.hpp"

namespace tps {

enum class TpsVariant { tps_l, tps_ef, tps_es };

inline const char* to_string(TpsVariant v) {
  switch (v) {
    case TpsVariant::tps_l: return "tps-l";
    case TpsVariant::tps_ef: return "tps-ef";
    case TpsVariant::tps_es: return "tps-es";
  }
  return "?";
}

// Intermediate-target family: what the leaves sample and what the merges
// reweigh against.
//
//   tps_l  : leaf j targets f_j proportional to p(y_j|x_j) (times the prior
//            at j = 0), realised by quadrature on a working grid; a merge
//            multiplies by the bridging transition density only.
//   tps_ef : leaf j targets a filtering estimate p-hat(x_j | y_{0:j}); a
//            merge multiplies by transition x emission over the estimate at
//            the seam index.
//   tps_es : leaf j targets a smoothing estimate p-hat(x_j | y_{0:T}); a
//            merge additionally takes the filter/smoother ratio at the last
//            index of the left child.
struct TargetFamily {
  TpsVariant variant = TpsVariant::tps_l;
  std::vector<DensityEstimate> filter;    // p-hat(x_j | y_{0:j}); used by tps_ef, tps_es
  std::vector<DensityEstimate> smoother;  // p-hat(x_j | y_{0:T}); used by tps_es

  // tps_l leaf realisation knobs.
  int leaf_grid_bins = 1024;
  double search_lo = -100.0;
  double search_hi = 100.0;
};

inline TargetFamily make_tpsl_family() { return TargetFamily{}; }

inline TargetFamily make_tpsef_family(std::vector<DensityEstimate> filter) {
  TargetFamily f;
  f.variant = TpsVariant::tps_ef;
  f.filter = std::move(filter);
  return f;
}

// tps_es needs filter and smoother estimates with common support at every
// index; the bench pipeline enforces that with grid-mixture pairs.
inline TargetFamily make_tpses_family(std::vector<DensityEstimate> filter,
                                      std::vector<DensityEstimate> smoother) {
  TargetFamily f;
  f.variant = TpsVariant::tps_es;
  f.filter = std::move(filter);
  f.smoother = std::move(smoother);
  return f;
}

// N particles over the span [j, l]; column c of the row-major state matrix
// holds values of X_{j+c}. Log-weights use the convention uniform == 0, so
// the mean unnormalised weight at a merge is directly the local estimate of
// the normalising-constant increment.
struct WeightedPath {
  int j = 0;
  int l = 0;
  int n = 0;
  std::vector<double> states;       // n x (l - j + 1), row-major
  std::vector<double> log_weights;  // length n

  int width() const { return l - j + 1; }
  double state(int i, int c) const {
    return states[static_cast<std::size_t>(i) * width() + c];
  }
  double& state(int i, int c) {
    return states[static_cast<std::size_t>(i) * width() + c];
  }
};

struct NodeDiagnostics {
  int j = 0;
  int l = 0;
  double ess_before_resample = 0.0;
  int killed = 0;  // particles whose merge weight collapsed to zero
};

struct TpsOptions {
  ResampleScheme scheme = ResampleScheme::systematic;
  // Resample at every merge (Algorithm fidelity) unless a trigger fraction
  // is set, in which case a merge resamples only when ESS < trigger * N.
  std::optional<double> ess_trigger;
};

using NodeObserver = std::function<void(const TreeNode&, const WeightedPath&)>;

struct TpsResult {
  WeightedPath path;
  double log_normalizer = 0.0;  // estimate of log p(y_{0:T}) at the root
  std::vector<NodeDiagnostics> diagnostics;  // post-order
};

// ---------------------------------------------------------------------------
// Leaf targets
// ---------------------------------------------------------------------------

struct LeafTarget {
  DensityEstimate density;
  // log integral of the unnormalised leaf factor the density realises
  // (tps_l quadrature mass; exactly 0 for estimate-based leaves).
  double log_normalizer = 0.0;
};

namespace detail {

// Realises the tps_l leaf factor on a working grid: a coarse scan over the
// configured search range locates the high-density region, then a fine grid
// is laid over it and widened until the two boundary cells carry less than
// 1e-3 of the total mass. Handles non-conjugate, bimodal emissions.
inline LeafTarget build_tpsl_leaf(const TargetFamily& fam, int j, const ModelSpec& model,
                                  const ObservationSeq& obs) {
  auto log_gamma = [&](double x) {
    double lg = model.log_emit(j, x, obs.y[j]);
    if (j == 0) lg += model.log_prior(x);
    return lg;
  };

  const int coarse_n = 512;
  const double step = (fam.search_hi - fam.search_lo) / (coarse_n - 1);
  double best = neg_inf;
  std::vector<double> coarse(coarse_n);
  for (int i = 0; i < coarse_n; ++i) {
    coarse[i] = log_gamma(fam.search_lo + i * step);
    best = std::max(best, coarse[i]);
  }
  if (best == neg_inf) {
    std::ostringstream msg;
    msg << "tps-l leaf " << j << ": target vanishes on search range [" << fam.search_lo
        << ", " << fam.search_hi << "]";
    throw degenerate_error(msg.str());
  }
  double lo = fam.search_hi, hi = fam.search_lo;
  for (int i = 0; i < coarse_n; ++i) {
    if (coarse[i] >= best - 34.5) {  // exp(-34.5) ~ 1e-15 relative
      lo = std::min(lo, fam.search_lo + i * step);
      hi = std::max(hi, fam.search_lo + i * step);
    }
  }
  lo -= 2.0 * step;
  hi += 2.0 * step;

  const int n = std::max(16, fam.leaf_grid_bins);
  for (int attempt = 0; attempt < 8; ++attempt) {
    const double delta = (hi - lo) / n;
    std::vector<double> vals(static_cast<std::size_t>(n));
    double mx = neg_inf;
    for (int i = 0; i < n; ++i) {
      vals[static_cast<std::size_t>(i)] = log_gamma(lo + (i + 0.5) * delta);
      mx = std::max(mx, vals[static_cast<std::size_t>(i)]);
    }
    double total = 0.0;
    std::vector<double> dens(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      dens[static_cast<std::size_t>(i)] = std::exp(vals[static_cast<std::size_t>(i)] - mx);
      total += dens[static_cast<std::size_t>(i)];
    }
    const double edge = dens.front() + dens.back();
    if (total > 0.0 && edge <= 1e-3 * total) {
      LeafTarget lt{DensityEstimate(GridDensity(lo + 0.5 * delta, delta, std::move(dens))),
                    mx + std::log(total * delta)};
      return lt;
    }
    // Widen around the center and retry.
    const double c = 0.5 * (lo + hi), w = 0.75 * (hi - lo);
    lo = c - w;
    hi = c + w;
  }
  std::ostringstream msg;
  msg << "tps-l leaf " << j << ": target not integrable on working grid "
      << "(boundary mass above 1e-3 after widening)";
  throw degenerate_error(msg.str());
}

}  // namespace detail

inline LeafTarget build_leaf_target(const TargetFamily& fam, int j, const ModelSpec& model,
                                    const ObservationSeq& obs) {
  switch (fam.variant) {
    case TpsVariant::tps_l:
      return detail::build_tpsl_leaf(fam, j, model, obs);
    case TpsVariant::tps_ef:
      return LeafTarget{fam.filter.at(static_cast<std::size_t>(j)), 0.0};
    case TpsVariant::tps_es:
      return LeafTarget{fam.smoother.at(static_cast<std::size_t>(j)), 0.0};
  }
  throw error("build_leaf_target: bad variant");
}

// N leaf draws at uniform weight 1/N (leaf branch of the recursion).
inline WeightedPath leaf_sample(const TargetFamily& fam, int j, const ModelSpec& model,
                                const ObservationSeq& obs, int n, Rng& rng) {
  const LeafTarget lt = build_leaf_target(fam, j, model, obs);
  WeightedPath wp{j, j, n};
  wp.states.resize(static_cast<std::size_t>(n));
  wp.log_weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) wp.states[static_cast<std::size_t>(i)] = lt.density.sample(rng);
  return wp;
}

// Ideal leaf log-density used by the weight-cancellation identity: the
// unnormalised tps_l factor, or the estimate actually targeted for
// tps_ef / tps_es.
inline double leaf_log_density(const TargetFamily& fam, int j, const ModelSpec& model,
                               const ObservationSeq& obs, double x) {
  switch (fam.variant) {
    case TpsVariant::tps_l: {
      double lg = model.log_emit(j, x, obs.y[j]);
      if (j == 0) lg += model.log_prior(x);
      return lg;
    }
    case TpsVariant::tps_ef:
      return fam.filter.at(static_cast<std::size_t>(j)).log_density(x);
    case TpsVariant::tps_es:
      return fam.smoother.at(static_cast<std::size_t>(j)).log_density(x);
  }
  throw error("leaf_log_density: bad variant");
}

// ---------------------------------------------------------------------------
// Merge weights
// ---------------------------------------------------------------------------

// Log-weight increment for concatenating the i-th left particle with the
// i-th right particle at the node's cut k: x_left_last is the last element
// of the left path (index k-1), x_right_first the first of the right
// (index k).
//
// A zero estimate in a denominator kills the particle (weight -inf); callers
// count those. The arithmetic below keeps -inf out of subtractions so no NaN
// can form.
inline double merge_log_weight(const TargetFamily& fam, const ModelSpec& model,
                               const ObservationSeq& obs, const TreeNode& node,
                               double x_left_last, double x_right_first) {
  const int k = node.cut;
  const double lt = model.log_trans(k, x_left_last, x_right_first);
  switch (fam.variant) {
    case TpsVariant::tps_l:
      return lt;
    case TpsVariant::tps_ef: {
      const double den = fam.filter[static_cast<std::size_t>(k)].log_density(x_right_first);
      if (den == neg_inf) return neg_inf;
      return lt + model.log_emit(k, x_right_first, obs.y[k]) - den;
    }
    case TpsVariant::tps_es: {
      const double den_s = fam.smoother[static_cast<std::size_t>(k - 1)].log_density(x_left_last);
      const double den_f = fam.filter[static_cast<std::size_t>(k)].log_density(x_right_first);
      if (den_s == neg_inf || den_f == neg_inf) return neg_inf;
      const double num_f = fam.filter[static_cast<std::size_t>(k - 1)].log_density(x_left_last);
      return lt + model.log_emit(k, x_right_first, obs.y[k]) + num_f - den_s - den_f;
    }
  }
  throw error("merge_log_weight: bad variant");
}

// The root target is exactly p(x_{0:T} | y_{0:T}). Estimate-based families
// must therefore swap the leaf-0 estimate back out for the true
// prior x emission factor at index 0 (and, for tps_es, undo the
// smoother/filter estimate mismatch left at index T). With exact estimates
// both corrections are constant in x.
inline double root_log_correction(const TargetFamily& fam, const ModelSpec& model,
                                  const ObservationSeq& obs, double x_first, double x_last) {
  switch (fam.variant) {
    case TpsVariant::tps_l:
      return 0.0;
    case TpsVariant::tps_ef: {
      const double den = fam.filter[0].log_density(x_first);
      if (den == neg_inf) return neg_inf;
      return model.log_prior(x_first) + model.log_emit(0, x_first, obs.y[0]) - den;
    }
    case TpsVariant::tps_es: {
      const std::size_t T = static_cast<std::size_t>(model.T);
      const double den0 = fam.filter[0].log_density(x_first);
      const double denT = fam.smoother[T].log_density(x_last);
      if (den0 == neg_inf || denT == neg_inf) return neg_inf;
      return model.log_prior(x_first) + model.log_emit(0, x_first, obs.y[0]) - den0 +
             fam.filter[T].log_density(x_last) - denT;
    }
  }
  throw error("root_log_correction: bad variant");
}

// ---------------------------------------------------------------------------
// Recursion
// ---------------------------------------------------------------------------

namespace detail {

inline std::string node_label(const TreeNode& nd) {
  std::ostringstream os;
  os << "[" << nd.j << ":" << nd.l << "]";
  return os.str();
}

// Evaluates the subtree rooted at node_id in post-order. Every node draws
// from its own RNG substream keyed by (seed, j, l), so results do not depend
// on evaluation schedule.
inline TpsResult run_subtree(const Tree& tree, int node_id, const TargetFamily& fam,
                             const ModelSpec& model, const ObservationSeq& obs, int n,
                             const TpsOptions& opt, std::uint64_t seed,
                             const NodeObserver& observer) {
  if (n < 1) throw config_error("tps: need at least one particle");
  std::vector<std::optional<WeightedPath>> slot(tree.nodes.size());
  TpsResult result;

  // Post-order positions restricted to the requested subtree.
  std::vector<int> schedule;
  {
    std::vector<char> wanted(tree.nodes.size(), 0);
    std::vector<int> stack{node_id};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      wanted[static_cast<std::size_t>(id)] = 1;
      const TreeNode& nd = tree.nodes[static_cast<std::size_t>(id)];
      if (!nd.leaf()) {
        stack.push_back(nd.left);
        stack.push_back(nd.right);
      }
    }
    for (int id : tree.post_order)
      if (wanted[static_cast<std::size_t>(id)]) schedule.push_back(id);
  }

  const bool full_tree = tree.nodes[static_cast<std::size_t>(node_id)].j == 0 &&
                         tree.nodes[static_cast<std::size_t>(node_id)].l == tree.T;

  for (int id : schedule) {
    const TreeNode& nd = tree.nodes[static_cast<std::size_t>(id)];
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(nd.j) + 1,
                          static_cast<std::uint64_t>(nd.l) + 1);

    if (nd.leaf()) {
      const LeafTarget lt = build_leaf_target(fam, nd.j, model, obs);
      WeightedPath wp{nd.j, nd.l, n};
      wp.states.resize(static_cast<std::size_t>(n));
      wp.log_weights.assign(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i)
        wp.states[static_cast<std::size_t>(i)] = lt.density.sample(rng);
      result.log_normalizer += lt.log_normalizer;
      result.diagnostics.push_back(
          NodeDiagnostics{nd.j, nd.l, static_cast<double>(n), 0});
      if (observer) observer(nd, wp);
      slot[static_cast<std::size_t>(id)] = std::move(wp);
      continue;
    }

    WeightedPath left = std::move(*slot[static_cast<std::size_t>(nd.left)]);
    slot[static_cast<std::size_t>(nd.left)].reset();
    WeightedPath right = std::move(*slot[static_cast<std::size_t>(nd.right)]);
    slot[static_cast<std::size_t>(nd.right)].reset();

    const int wl = left.width(), wr = right.width(), w = wl + wr;
    WeightedPath merged{nd.j, nd.l, n};
    merged.states.resize(static_cast<std::size_t>(n) * w);
    merged.log_weights.resize(static_cast<std::size_t>(n));

    const bool at_root = full_tree && nd.j == 0 && nd.l == tree.T;
    int killed = 0;
    double lse_before = neg_inf;  // logsumexp of combined weights pre-increment
    {
      std::vector<double> combined(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        double* dst = merged.states.data() + static_cast<std::size_t>(i) * w;
        std::memcpy(dst, left.states.data() + static_cast<std::size_t>(i) * wl,
                    sizeof(double) * static_cast<std::size_t>(wl));
        std::memcpy(dst + wl, right.states.data() + static_cast<std::size_t>(i) * wr,
                    sizeof(double) * static_cast<std::size_t>(wr));
        const double lw = left.log_weights[static_cast<std::size_t>(i)] +
                          right.log_weights[static_cast<std::size_t>(i)];
        combined[static_cast<std::size_t>(i)] = lw;
        double inc = merge_log_weight(fam, model, obs, nd, left.state(i, wl - 1),
                                      right.state(i, 0));
        if (at_root && inc != neg_inf) {
          const double corr =
              root_log_correction(fam, model, obs, left.state(i, 0), right.state(i, wr - 1));
          inc = (corr == neg_inf) ? neg_inf : inc + corr;
        }
        if (inc == neg_inf && lw != neg_inf) ++killed;
        merged.log_weights[static_cast<std::size_t>(i)] =
            (inc == neg_inf || lw == neg_inf) ? neg_inf : lw + inc;
      }
      lse_before = log_sum_exp(combined);
    }

    NormalizedWeights nw;
    try {
      nw = normalize(merged.log_weights);
    } catch (const degenerate_error&) {
      throw degenerate_error("tps: degenerate merge at node " + node_label(nd) +
                             " (all particle weights vanished)");
    }
    result.log_normalizer += log_sum_exp(merged.log_weights) - lse_before;

    const double node_ess = ess(nw.probs);
    result.diagnostics.push_back(NodeDiagnostics{nd.j, nd.l, node_ess, killed});

    const bool do_resample = !opt.ess_trigger || node_ess < *opt.ess_trigger * n;
    if (do_resample) {
      const std::vector<int> idx = resample(nw.probs, n, opt.scheme, rng);
      WeightedPath next{nd.j, nd.l, n};
      next.states.resize(static_cast<std::size_t>(n) * w);
      next.log_weights.assign(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i) {
        std::memcpy(next.states.data() + static_cast<std::size_t>(i) * w,
                    merged.states.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * w,
                    sizeof(double) * static_cast<std::size_t>(w));
      }
      merged = std::move(next);
    } else {
      const double logn = std::log(static_cast<double>(n));
      for (int i = 0; i < n; ++i) {
        const double p = nw.probs[static_cast<std::size_t>(i)];
        merged.log_weights[static_cast<std::size_t>(i)] =
            p > 0.0 ? std::log(p) + logn : neg_inf;
      }
    }

    if (observer) observer(nd, merged);
    slot[static_cast<std::size_t>(id)] = std::move(merged);
  }

  result.path = std::move(*slot[static_cast<std::size_t>(node_id)]);
  return result;
}

}  // namespace detail

// Weighted samples from the intermediate target of one tree node (children
// evaluated recursively as needed).
inline TpsResult ts(const Tree& tree, int node_id, const TargetFamily& fam,
                    const ModelSpec& model, const ObservationSeq& obs, int n,
                    const TpsOptions& opt, std::uint64_t seed,
                    const NodeObserver& observer = {}) {
  return detail::run_subtree(tree, node_id, fam, model, obs, n, opt, seed, observer);
}

// Full run: build the tree over [0, T] and evaluate it bottom-up. The root
// path targets p(x_{0:T} | y_{0:T}); log_normalizer estimates log p(y_{0:T}).
inline TpsResult tps_run(const ModelSpec& model, const ObservationSeq& obs,
                         const TargetFamily& fam, int n, const TpsOptions& opt,
                         std::uint64_t seed, const NodeObserver& observer = {}) {
  if (obs.T() != model.T)
    throw config_error("tps_run: observation length does not match model horizon");
  if (fam.variant != TpsVariant::tps_l &&
      fam.filter.size() != static_cast<std::size_t>(model.T) + 1)
    throw config_error("tps_run: filter estimates must cover every index 0..T");
  if (fam.variant == TpsVariant::tps_es &&
      fam.smoother.size() != static_cast<std::size_t>(model.T) + 1)
    throw config_error("tps_run: smoother estimates must cover every index 0..T");
  const Tree tree = build_tree(model.T);
  return detail::run_subtree(tree, tree.root, fam, model, obs, n, opt, seed, observer);
}

}  // namespace tps
