#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tps/baselines.hpp"
#include "tps/common.hpp"
#include "tps/config.hpp"
#include "tps/density.hpp"
#include "tps/metrics.hpp"
#include "tps/model.hpp"
#include "tps/oracle.hpp"
#include "tps/smoother.hpp"

namespace tps {

namespace detail {

// Substream tags for the per-replication pipelines.
enum : std::uint64_t {
  kTagObs = 0xa1,
  kTagFilter = 0xa2,
  kTagTree = 0xa3,
  kTagInnerTree = 0xa4,
  kTagDraws = 0xa5,
};

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw error("cannot open " + tmp.string() + " for writing");
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline ModelSpec make_model(const ExperimentConfig& cfg) {
  return cfg.model == ModelKind::linear
             ? linear_gaussian_model(cfg.T)
             : nonlinear_benchmark_model(cfg.T, cfg.tau, cfg.sigma);
}

// Ground truth for one observation sequence: per-step smoothing moments plus
// CDFs. Linear models use the closed-form route; nonlinear models the grid
// oracle.
struct TruthSummary {
  std::vector<double> mean, var;
  std::function<double(int, double)> cdf;
  std::shared_ptr<OracleSolution> oracle;  // set for the grid route
};

inline TruthSummary compute_truth(const ExperimentConfig& cfg, const ModelSpec& model,
                                  const ObservationSeq& obs, int threads) {
  TruthSummary truth;
  if (cfg.model == ModelKind::linear) {
    const GaussianBelief smooth = rts_smoother(model, obs);
    truth.mean = smooth.mean;
    truth.var = smooth.var;
    truth.cdf = [mean = smooth.mean, var = smooth.var](int t, double x) {
      return normal_cdf(x, mean[static_cast<std::size_t>(t)],
                        std::sqrt(var[static_cast<std::size_t>(t)]));
    };
  } else {
    const DiscreteHMM dhmm =
        discretize_auto(model, obs, cfg.oracle_bins, cfg.oracle_range(), threads);
    auto sol = std::make_shared<OracleSolution>(forward_backward(dhmm, threads));
    truth.mean = sol->mean;
    truth.var = sol->var;
    truth.cdf = [sol](int t, double x) { return sol->cdf(t, x); };
    truth.oracle = sol;
  }
  return truth;
}

namespace detail {

// Per-step weighted samples produced by one replication of some smoother.
struct SmoothingSamples {
  std::vector<std::vector<double>> values;  // (T+1) x N
  std::vector<double> probs;                // shared across steps, sums to 1
};

inline SmoothingSamples from_weighted_path(const WeightedPath& path) {
  SmoothingSamples out;
  const int T = path.l - path.j;
  out.values.assign(static_cast<std::size_t>(T) + 1,
                    std::vector<double>(static_cast<std::size_t>(path.n)));
  for (int t = 0; t <= T; ++t)
    for (int i = 0; i < path.n; ++i)
      out.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = path.state(i, t);
  out.probs = normalize(path.log_weights).probs;
  return out;
}

inline std::vector<DensityEstimate> filter_estimates(const ExperimentConfig& cfg,
                                                     const FilterOutput& fo) {
  std::vector<DensityEstimate> est;
  est.reserve(static_cast<std::size_t>(fo.T) + 1);
  const std::optional<double> bw =
      cfg.bandwidth > 0.0 ? std::optional<double>(cfg.bandwidth) : std::nullopt;
  for (int t = 0; t <= fo.T; ++t) {
    const auto& xs = fo.particles[static_cast<std::size_t>(t)];
    const std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
    switch (cfg.density) {
      case DensityKind::normal:
        est.emplace_back(fit_normal_weighted(xs, w));
        break;
      case DensityKind::kde:
        est.emplace_back(kde_fit(xs, w, bw));
        break;
      case DensityKind::grid:
        est.emplace_back(grid_from_samples(xs, w, cfg.grid_bins, bw));
        break;
    }
  }
  return est;
}

inline std::vector<GridDensity> grids_from_path(const ExperimentConfig& cfg,
                                                const WeightedPath& path) {
  const SmoothingSamples ss = from_weighted_path(path);
  const std::optional<double> bw =
      cfg.bandwidth > 0.0 ? std::optional<double>(cfg.bandwidth) : std::nullopt;
  std::vector<GridDensity> grids;
  grids.reserve(ss.values.size());
  for (const auto& xs : ss.values)
    grids.push_back(grid_from_samples(xs, ss.probs, cfg.grid_bins, bw));
  return grids;
}

struct ReplicationOutput {
  SmoothingSamples samples;
  // ffbsm reweighs the same particles per step, so weights differ by step.
  std::vector<std::vector<double>> per_step_probs;
  std::vector<NodeDiagnostics> diagnostics;        // tps algorithms, root run
  std::vector<DensityEstimate> filter_estimates;   // kept for dump flags
};

// Runs one replication of the configured algorithm and returns its per-step
// weighted smoothing samples.
inline ReplicationOutput run_replication(const ExperimentConfig& cfg, const ModelSpec& model,
                                         const ObservationSeq& obs, std::uint64_t rep_seed,
                                         bool keep_extras) {
  ReplicationOutput out;
  TpsOptions opt;
  opt.scheme = cfg.resampling;
  opt.ess_trigger = cfg.ess_trigger;

  switch (cfg.algorithm) {
    case Algorithm::bpf: {
      Rng rng = make_stream(rep_seed, kTagFilter);
      const FilterOutput fo = bootstrap_pf(model, obs, static_cast<int>(cfg.particles), true,
                                           cfg.resampling, rng);
      out.samples.values = pf_paths(fo);
      out.samples.probs.assign(static_cast<std::size_t>(fo.n), 1.0 / fo.n);
      return out;
    }
    case Algorithm::ffbsm: {
      Rng rng = make_stream(rep_seed, kTagFilter);
      const FilterOutput fo = bootstrap_pf(model, obs, static_cast<int>(cfg.filter_particles),
                                           false, cfg.resampling, rng);
      const auto sw = ffbsm(fo, model);
      out.samples.values = fo.particles;
      out.per_step_probs.resize(sw.size());
      for (std::size_t t = 0; t < sw.size(); ++t)
        out.per_step_probs[t] = normalize(sw[t]).probs;
      return out;
    }
    case Algorithm::ffbsi: {
      Rng rng = make_stream(rep_seed, kTagFilter);
      const FilterOutput fo = bootstrap_pf(model, obs, static_cast<int>(cfg.filter_particles),
                                           false, cfg.resampling, rng);
      Rng draw_rng = make_stream(rep_seed, kTagDraws);
      const WeightedPath path =
          ffbsi(fo, model, static_cast<int>(cfg.particles), draw_rng);
      out.samples = from_weighted_path(path);
      return out;
    }
    case Algorithm::rts:
      throw error("run_replication: rts handled by the caller");
    case Algorithm::tps_l: {
      TargetFamily fam = make_tpsl_family();
      fam.leaf_grid_bins = cfg.leaf_grid_bins;
      fam.search_lo = cfg.leaf_search_lo;
      fam.search_hi = cfg.leaf_search_hi;
      TpsResult res = tps_run(model, obs, fam, static_cast<int>(cfg.particles), opt,
                              mix64(rep_seed ^ kTagTree));
      out.samples = from_weighted_path(res.path);
      if (keep_extras) out.diagnostics = std::move(res.diagnostics);
      return out;
    }
    case Algorithm::tps_ef: {
      Rng rng = make_stream(rep_seed, kTagFilter);
      const FilterOutput fo = bootstrap_pf(model, obs, static_cast<int>(cfg.filter_particles),
                                           false, cfg.resampling, rng);
      std::vector<DensityEstimate> est = filter_estimates(cfg, fo);
      if (keep_extras) out.filter_estimates = est;
      TargetFamily fam = make_tpsef_family(std::move(est));
      TpsResult res = tps_run(model, obs, fam, static_cast<int>(cfg.particles), opt,
                              mix64(rep_seed ^ kTagTree));
      out.samples = from_weighted_path(res.path);
      if (keep_extras) out.diagnostics = std::move(res.diagnostics);
      return out;
    }
    case Algorithm::tps_es: {
      // Pipeline: bootstrap filter (n) -> filter grids -> tps-ef run (n') ->
      // smoother grids -> mixture pairs -> tps-es run (N).
      Rng rng = make_stream(rep_seed, kTagFilter);
      const FilterOutput fo = bootstrap_pf(model, obs, static_cast<int>(cfg.filter_particles),
                                           false, cfg.resampling, rng);
      const std::optional<double> bw =
          cfg.bandwidth > 0.0 ? std::optional<double>(cfg.bandwidth) : std::nullopt;
      std::vector<GridDensity> fgrids;
      fgrids.reserve(static_cast<std::size_t>(fo.T) + 1);
      for (int t = 0; t <= fo.T; ++t) {
        const auto& xs = fo.particles[static_cast<std::size_t>(t)];
        const std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
        fgrids.push_back(grid_from_samples(xs, w, cfg.grid_bins, bw));
      }
      std::vector<DensityEstimate> efp_filter(fgrids.begin(), fgrids.end());
      if (keep_extras) out.filter_estimates = efp_filter;
      TargetFamily efp = make_tpsef_family(std::move(efp_filter));
      const TpsResult inner = tps_run(model, obs, efp, static_cast<int>(cfg.smoother_particles),
                                      opt, mix64(rep_seed ^ kTagInnerTree));
      const std::vector<GridDensity> sgrids = grids_from_path(cfg, inner.path);

      std::vector<DensityEstimate> filt, smoo;
      filt.reserve(fgrids.size());
      smoo.reserve(fgrids.size());
      for (std::size_t t = 0; t < fgrids.size(); ++t) {
        filt.emplace_back(mixture_filter_estimate(fgrids[t], sgrids[t], cfg.alpha_f));
        smoo.emplace_back(mixture_smoother_estimate(sgrids[t], fgrids[t], cfg.alpha_s));
      }
      TargetFamily fam = make_tpses_family(std::move(filt), std::move(smoo));
      TpsResult res = tps_run(model, obs, fam, static_cast<int>(cfg.particles), opt,
                              mix64(rep_seed ^ kTagTree));
      out.samples = from_weighted_path(res.path);
      if (keep_extras) out.diagnostics = std::move(res.diagnostics);
      return out;
    }
  }
  throw error("run_replication: bad algorithm");
}

}  // namespace detail

struct RunOptions {
  std::string out_dir = ".";
  bool dump_tree = false;
  bool dump_oracle = false;
  bool dump_diagnostics = false;
  std::optional<int> dump_cdf_t;
  std::optional<int> dump_grid_t;
  int threads_override = 0;  // >0 wins over config
};

struct RunArtifacts {
  std::string metrics_csv;
  std::string diagnostics_csv;
  std::string cdf_tsv;
  std::string grid_tsv;
  std::string oracle_tsv;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  RunArtifacts artifacts;
};

// Per-step CDF comparison at one time index: oracle smoothing CDF, oracle
// filtering CDF and the emission-only initial sampling CDF, tabulated over
// the oracle grid.
inline std::string cdf_comparison_tsv(const ExperimentConfig& cfg, int t, int threads) {
  if (cfg.model != ModelKind::nonlinear)
    throw unsupported_error("dump_cdf: comparison is specific to the nonlinear model");
  if (t < 0 || t > cfg.T) throw config_error("dump_cdf: time index out of range");
  const ModelSpec model = make_model(cfg);
  Rng obs_rng = make_stream(cfg.obs_seed, detail::kTagObs);
  const ObservationSeq obs = simulate(model, obs_rng).second;
  const DiscreteHMM dhmm =
      discretize_auto(model, obs, cfg.oracle_bins, cfg.oracle_range(), threads);
  const OracleSolution sol = forward_backward(dhmm, threads);

  TargetFamily fam = make_tpsl_family();
  fam.leaf_grid_bins = cfg.leaf_grid_bins;
  fam.search_lo = cfg.leaf_search_lo;
  fam.search_hi = cfg.leaf_search_hi;
  const LeafTarget leaf = build_leaf_target(fam, t, model, obs);

  std::ostringstream os;
  os << "x\tcdf_smoothing_oracle\tcdf_filtering_oracle\tcdf_initial_sampling\n";
  char buf[160];
  for (std::size_t i = 0; i < sol.grid.size(); ++i) {
    const double x = sol.grid[i];
    std::snprintf(buf, sizeof(buf), "%.8g\t%.8g\t%.8g\t%.8g\n", x, sol.cdf(t, x),
                  sol.filter_cdf(t, x), leaf.density.cdf(x));
    os << buf;
  }
  return os.str();
}

// Simulates the fixed observation sequence, computes the ground truth, runs
// M seeded replications of the configured algorithm (in parallel; outputs
// are keyed by replication index, so the CSV is identical for every thread
// count) and writes metrics.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const RunOptions& ropt = {}) {
  cfg.validate();
  const int threads =
      ropt.threads_override > 0 ? ropt.threads_override : resolve_threads(cfg.threads);
  const ModelSpec model = make_model(cfg);
  Rng obs_rng = make_stream(cfg.obs_seed, detail::kTagObs);
  const ObservationSeq obs = simulate(model, obs_rng).second;
  const TruthSummary truth = compute_truth(cfg, model, obs, threads);

  std::filesystem::create_directories(ropt.out_dir);
  ExperimentResult result;
  result.rows.resize(static_cast<std::size_t>(cfg.replications));

  std::vector<NodeDiagnostics> diag0;
  std::vector<DensityEstimate> est0;

  parallel_for_index(static_cast<std::size_t>(cfg.replications), threads, [&](std::size_t m) {
    const std::uint64_t rep_seed = mix64(cfg.seed + 0x517cc1b727220a95ULL * (m + 1));
    MetricsRow row;
    row.replication = static_cast<int>(m) + 1;
    row.algorithm = to_string(cfg.algorithm);
    row.N = cfg.particles;
    row.n = cfg.filter_particles;
    row.nprime = cfg.smoother_particles;
    row.seed = rep_seed;

    const auto started = std::chrono::steady_clock::now();
    if (cfg.algorithm == Algorithm::rts) {
      // Closed form: estimates equal the truth by construction.
      row.msem = 0.0;
      row.msev = 0.0;
      row.ks_sum = 0.0;
    } else {
      const bool keep_extras =
          m == 0 && (ropt.dump_diagnostics || ropt.dump_grid_t.has_value());
      detail::ReplicationOutput rep;
      try {
        rep = detail::run_replication(cfg, model, obs, rep_seed, keep_extras);
      } catch (const degenerate_error& e) {
        std::ostringstream msg;
        msg << "replication " << m + 1 << ": " << e.what();
        throw degenerate_error(msg.str());
      }
      std::vector<double> means(static_cast<std::size_t>(cfg.T) + 1);
      std::vector<double> vars(static_cast<std::size_t>(cfg.T) + 1);
      for (int t = 0; t <= cfg.T; ++t) {
        const auto& xs = rep.samples.values[static_cast<std::size_t>(t)];
        const auto& pw = rep.per_step_probs.empty() ? rep.samples.probs
                                                    : rep.per_step_probs[static_cast<std::size_t>(t)];
        const Moments mo = weighted_moments(xs, pw);
        means[static_cast<std::size_t>(t)] = mo.mean;
        vars[static_cast<std::size_t>(t)] = mo.var;
      }
      row.msem = msem(means, truth.mean);
      row.msev = msev(vars, truth.var);
      double ks = 0.0;
      for (int t = 0; t <= cfg.T; ++t) {
        const auto& pw = rep.per_step_probs.empty() ? rep.samples.probs
                                                    : rep.per_step_probs[static_cast<std::size_t>(t)];
        ks += ks_statistic(rep.samples.values[static_cast<std::size_t>(t)], pw,
                           [&](double x) { return truth.cdf(t, x); });
      }
      row.ks_sum = ks;
      if (keep_extras) {
        diag0 = std::move(rep.diagnostics);
        est0 = std::move(rep.filter_estimates);
      }
    }
    row.runtime_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    result.rows[m] = std::move(row);
  });

  // metrics.csv
  {
    std::ostringstream os;
    os << kMetricsCsvHeader << "\n";
    for (const auto& row : result.rows) os << metrics_csv_line(row) << "\n";
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-metrics.csv");
    detail::write_atomic(path, os.str());
    result.artifacts.metrics_csv = path.string();
  }

  if (ropt.dump_tree) {
    std::ostringstream os;
    dump_tree(build_tree(cfg.T), os);
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-tree.txt");
    detail::write_atomic(path, os.str());
  }
  if (ropt.dump_oracle && truth.oracle) {
    std::ostringstream os;
    os << "t\tmean\tvar\n";
    char buf[96];
    for (std::size_t t = 0; t < truth.mean.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%zu\t%.10g\t%.10g\n", t, truth.mean[t], truth.var[t]);
      os << buf;
    }
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-oracle.tsv");
    detail::write_atomic(path, os.str());
    result.artifacts.oracle_tsv = path.string();
  }
  if (ropt.dump_diagnostics && !diag0.empty()) {
    std::ostringstream os;
    os << "node_j,node_l,ess_before_resample,killed_count\n";
    char buf[96];
    for (const auto& d : diag0) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.6g,%d\n", d.j, d.l, d.ess_before_resample,
                    d.killed);
      os << buf;
    }
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-diagnostics.csv");
    detail::write_atomic(path, os.str());
    result.artifacts.diagnostics_csv = path.string();
  }
  if (ropt.dump_grid_t && !est0.empty()) {
    const int t = *ropt.dump_grid_t;
    if (t < 0 || t > cfg.T) throw config_error("dump_grid: time index out of range");
    const auto& est = est0[static_cast<std::size_t>(t)];
    std::ostringstream os;
    os << "center\tdensity\n";
    if (const auto* g = std::get_if<GridDensity>(&est.impl())) {
      char buf[96];
      for (int i = 0; i < g->bins(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.10g\t%.10g\n", g->x1() + i * g->delta(),
                      g->densities()[static_cast<std::size_t>(i)]);
        os << buf;
      }
    } else {
      throw unsupported_error("dump_grid: estimate at t is not a grid density");
    }
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-grid.tsv");
    detail::write_atomic(path, os.str());
    result.artifacts.grid_tsv = path.string();
  }
  if (ropt.dump_cdf_t) {
    const std::string tsv = cdf_comparison_tsv(cfg, *ropt.dump_cdf_t, threads);
    const auto path = std::filesystem::path(ropt.out_dir) / (cfg.name + "-cdf.tsv");
    detail::write_atomic(path, tsv);
    result.artifacts.cdf_tsv = path.string();
  }
  return result;
}

}  // namespace tps
