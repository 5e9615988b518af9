#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tps/common.hpp"
#include "tps/resampling.hpp"

namespace tps {

enum class ModelKind { linear, nonlinear };
enum class Algorithm { tps_l, tps_ef, tps_es, bpf, ffbsm, ffbsi, rts };
enum class DensityKind { normal, kde, grid };

inline const char* to_string(ModelKind m) {
  return m == ModelKind::linear ? "linear" : "nonlinear";
}

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::tps_l: return "tps-l";
    case Algorithm::tps_ef: return "tps-ef";
    case Algorithm::tps_es: return "tps-es";
    case Algorithm::bpf: return "bpf";
    case Algorithm::ffbsm: return "ffbsm";
    case Algorithm::ffbsi: return "ffbsi";
    case Algorithm::rts: return "rts";
  }
  return "?";
}

inline const char* to_string(DensityKind d) {
  switch (d) {
    case DensityKind::normal: return "normal";
    case DensityKind::kde: return "kde";
    case DensityKind::grid: return "grid";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "tps-l") return Algorithm::tps_l;
  if (s == "tps-ef") return Algorithm::tps_ef;
  if (s == "tps-es") return Algorithm::tps_es;
  if (s == "bpf") return Algorithm::bpf;
  if (s == "ffbsm") return Algorithm::ffbsm;
  if (s == "ffbsi") return Algorithm::ffbsi;
  if (s == "rts") return Algorithm::rts;
  throw config_error("unknown algorithm: " + s);
}

struct ExperimentConfig {
  std::string name = "custom";
  ModelKind model = ModelKind::linear;
  int T = 127;
  double tau = 1.0, sigma = 1.0;  // nonlinear model noise scales

  Algorithm algorithm = Algorithm::tps_ef;
  long long particles = 10000;          // N, target sample size
  long long filter_particles = -1;      // n, filter run feeding the estimates
  long long smoother_particles = -1;    // n', smoother estimate feed (tps-es)

  DensityKind density = DensityKind::grid;
  int grid_bins = 512;
  double bandwidth = 0.0;  // 0 = weighted Silverman default
  double alpha_f = 0.95, alpha_s = 0.95;

  ResampleScheme resampling = ResampleScheme::systematic;
  std::optional<double> ess_trigger;  // unset = resample at every merge

  int leaf_grid_bins = 1024;
  double leaf_search_lo = -100.0, leaf_search_hi = 100.0;

  int oracle_bins = 2000;
  double oracle_lo = 0.0, oracle_hi = 0.0;  // equal => model default

  int replications = 20;
  std::uint64_t seed = 1;
  std::uint64_t obs_seed = 20240711;  // fixed observation draw
  int threads = 0;  // 0 = hardware concurrency

  bool needs_filter_run() const {
    return algorithm == Algorithm::tps_ef || algorithm == Algorithm::tps_es ||
           algorithm == Algorithm::ffbsm || algorithm == Algorithm::ffbsi;
  }

  std::pair<double, double> oracle_range() const {
    if (oracle_lo < oracle_hi) return {oracle_lo, oracle_hi};
    // Wide enough that transitions out of the extreme cells stay inside;
    // discretize_auto extends further when the drift demands it.
    return model == ModelKind::linear ? std::make_pair(-30.0, 30.0)
                                      : std::make_pair(-45.0, 45.0);
  }

  void validate() const {
    if (T < 0) throw config_error("T must be >= 0");
    if (!(tau > 0.0) || !(sigma > 0.0)) throw config_error("tau and sigma must be positive");
    if (particles < 1) throw config_error("particles must be >= 1");
    if (replications < 1) throw config_error("replications must be >= 1");
    if (needs_filter_run() && filter_particles < 2)
      throw config_error(std::string("algorithm ") + to_string(algorithm) +
                         " requires filter_particles >= 2");
    if (algorithm == Algorithm::tps_es && smoother_particles < 2)
      throw config_error("tps-es requires smoother_particles (n') >= 2");
    if (algorithm != Algorithm::tps_es && smoother_particles >= 0)
      throw config_error("smoother_particles is only meaningful for tps-es");
    if (algorithm == Algorithm::tps_es && density != DensityKind::grid)
      throw config_error("tps-es requires density = grid (mixture support pairing)");
    if (grid_bins < 8) throw config_error("grid_bins must be >= 8");
    if (leaf_grid_bins < 16) throw config_error("leaf_grid_bins must be >= 16");
    if (oracle_bins < 16) throw config_error("oracle_bins must be >= 16");
    if (!(alpha_f > 0.0 && alpha_f < 1.0) || !(alpha_s > 0.0 && alpha_s < 1.0))
      throw config_error("alpha_f and alpha_s must lie in (0, 1)");
    if (ess_trigger && !(*ess_trigger > 0.0 && *ess_trigger <= 1.0))
      throw config_error("ess_trigger must lie in (0, 1]");
    if (!(leaf_search_lo < leaf_search_hi)) throw config_error("empty leaf search range");
    if (algorithm == Algorithm::rts && model != ModelKind::linear)
      throw config_error("rts is only available for the linear model");
    if (threads < 0) throw config_error("threads must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// key = value configuration
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out;
  is >> out;
  if (is.fail() || !is.eof())
    throw config_error("bad value for " + key + ": '" + value + "'");
  return out;
}

}  // namespace detail

inline void apply_config_kv(ExperimentConfig& cfg, const std::string& key,
                            const std::string& value) {
  using detail::parse_number;
  if (key == "model") {
    if (value == "linear") cfg.model = ModelKind::linear;
    else if (value == "nonlinear") cfg.model = ModelKind::nonlinear;
    else throw config_error("unknown model: " + value);
  } else if (key == "T") {
    cfg.T = parse_number<int>(key, value);
  } else if (key == "tau") {
    cfg.tau = parse_number<double>(key, value);
  } else if (key == "sigma") {
    cfg.sigma = parse_number<double>(key, value);
  } else if (key == "algorithm") {
    cfg.algorithm = parse_algorithm(value);
  } else if (key == "particles") {
    cfg.particles = parse_number<long long>(key, value);
  } else if (key == "filter_particles") {
    cfg.filter_particles = parse_number<long long>(key, value);
  } else if (key == "smoother_particles" || key == "nprime") {
    cfg.smoother_particles = parse_number<long long>(key, value);
  } else if (key == "density") {
    if (value == "normal") cfg.density = DensityKind::normal;
    else if (value == "kde") cfg.density = DensityKind::kde;
    else if (value == "grid") cfg.density = DensityKind::grid;
    else throw config_error("unknown density: " + value);
  } else if (key == "grid_bins") {
    cfg.grid_bins = parse_number<int>(key, value);
  } else if (key == "bandwidth") {
    cfg.bandwidth = parse_number<double>(key, value);
  } else if (key == "alpha_f") {
    cfg.alpha_f = parse_number<double>(key, value);
  } else if (key == "alpha_s") {
    cfg.alpha_s = parse_number<double>(key, value);
  } else if (key == "resampling") {
    cfg.resampling = parse_resample_scheme(value);
  } else if (key == "ess_trigger") {
    cfg.ess_trigger = parse_number<double>(key, value);
  } else if (key == "leaf_grid_bins") {
    cfg.leaf_grid_bins = parse_number<int>(key, value);
  } else if (key == "leaf_search_lo") {
    cfg.leaf_search_lo = parse_number<double>(key, value);
  } else if (key == "leaf_search_hi") {
    cfg.leaf_search_hi = parse_number<double>(key, value);
  } else if (key == "oracle_bins") {
    cfg.oracle_bins = parse_number<int>(key, value);
  } else if (key == "oracle_lo") {
    cfg.oracle_lo = parse_number<double>(key, value);
  } else if (key == "oracle_hi") {
    cfg.oracle_hi = parse_number<double>(key, value);
  } else if (key == "replications") {
    cfg.replications = parse_number<int>(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "obs_seed") {
    cfg.obs_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "threads") {
    cfg.threads = parse_number<int>(key, value);
  } else if (key == "name") {
    cfg.name = value;
  } else {
    throw config_error("unknown config key: " + key);
  }
}

// Plain `key = value` lines; '#' starts a comment.
inline void apply_config_stream(ExperimentConfig& cfg, std::istream& is) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << "config line " << lineno << ": expected key = value";
      throw config_error(msg.str());
    }
    apply_config_kv(cfg, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
  }
}

// ---------------------------------------------------------------------------
// Presets: one per benchmark table row, plus desk-scale variants
// ---------------------------------------------------------------------------

namespace detail {

inline ExperimentConfig linear_preset(std::string name, Algorithm alg, long long N,
                                      long long n, int M) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.model = ModelKind::linear;
  c.T = 127;
  c.algorithm = alg;
  c.particles = N;
  c.filter_particles = n;
  c.density = DensityKind::normal;
  c.replications = M;
  return c;
}

inline ExperimentConfig nonlinear_preset(std::string name, Algorithm alg, double tau,
                                         double sigma, long long N, long long n,
                                         long long nprime, int M) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.model = ModelKind::nonlinear;
  c.T = 511;
  c.tau = tau;
  c.sigma = sigma;
  c.algorithm = alg;
  c.particles = N;
  c.filter_particles = n;
  c.smoother_particles = nprime;
  c.density = DensityKind::grid;
  c.replications = M;
  return c;
}

}  // namespace detail

inline std::vector<ExperimentConfig> builtin_presets() {
  using detail::linear_preset;
  using detail::nonlinear_preset;
  std::vector<ExperimentConfig> p;

  // Linear benchmark rows (T = 127).
  p.push_back(linear_preset("table1-bpf", Algorithm::bpf, 44000, -1, 500));
  p.push_back(linear_preset("table1-ffbsm", Algorithm::ffbsm, 410, 410, 500));
  p.push_back(linear_preset("table1-ffbsi", Algorithm::ffbsi, 450, 450, 500));
  p.push_back(linear_preset("table1-tpsn", Algorithm::tps_ef, 10000, 10000, 500));
  {
    auto c = linear_preset("table1-tpsl", Algorithm::tps_l, 13000, -1, 500);
    p.push_back(c);
  }

  // Nonlinear benchmark rows (T = 511) over (tau, sigma) in
  // {(1,1), (1,5), (5,1)}, suffix codes 11 / 15 / 51.
  const std::vector<std::pair<std::pair<double, double>, std::string>> params{
      {{1.0, 1.0}, "11"}, {{1.0, 5.0}, "15"}, {{5.0, 1.0}, "51"}};
  for (const auto& [ts, code] : params) {
    const auto [tau, sigma] = ts;
    p.push_back(nonlinear_preset("table2-bpf-" + code, Algorithm::bpf, tau, sigma, 40000, -1, -1, 500));
    p.push_back(nonlinear_preset("table2-ffbsm-" + code, Algorithm::ffbsm, tau, sigma, 315, 315, -1, 500));
    p.push_back(nonlinear_preset("table2-ffbsi-" + code, Algorithm::ffbsi, tau, sigma, 320, 320, -1, 500));
    p.push_back(nonlinear_preset("table2-efp-" + code, Algorithm::tps_ef, tau, sigma, 10000, 10000, -1, 500));
    p.push_back(nonlinear_preset("table2-tpsl-" + code, Algorithm::tps_l, tau, sigma, 13000, -1, -1, 500));
    p.push_back(nonlinear_preset("table3-efp-" + code, Algorithm::tps_ef, tau, sigma, 50000, 50000, -1, 200));
    p.push_back(nonlinear_preset("table3-esp-equalN-" + code, Algorithm::tps_es, tau, sigma, 50000, 50000, 50000, 200));
    p.push_back(nonlinear_preset("table3-esp-matched-" + code, Algorithm::tps_es, tau, sigma, 18000, 50000, 25000, 200));
  }

  // Canonical unsuffixed names for the tau = sigma = 1 comparison rows.
  p.push_back(nonlinear_preset("table3-esp-equalN", Algorithm::tps_es, 1.0, 1.0, 50000, 50000, 50000, 200));
  p.push_back(nonlinear_preset("table3-esp-matched", Algorithm::tps_es, 1.0, 1.0, 18000, 50000, 25000, 200));

  // Desk-scale variants: M = 20 replications, coarser oracle; tolerances in
  // the acceptance suite are widened accordingly.
  {
    auto c = linear_preset("desk-table1-tpsn", Algorithm::tps_ef, 10000, 10000, 20);
    p.push_back(c);
    auto l = linear_preset("desk-table1-tpsl", Algorithm::tps_l, 13000, -1, 20);
    p.push_back(l);
  }
  auto desk = [&](std::string name, Algorithm alg, double tau, double sigma, long long N,
                  long long n, long long nprime) {
    auto c = detail::nonlinear_preset(std::move(name), alg, tau, sigma, N, n, nprime, 20);
    c.oracle_bins = 1000;
    return c;
  };
  p.push_back(desk("desk-table2-bpf-51", Algorithm::bpf, 5.0, 1.0, 40000, -1, -1));
  p.push_back(desk("desk-table2-efp-51", Algorithm::tps_ef, 5.0, 1.0, 10000, 10000, -1));
  p.push_back(desk("desk-table2-tpsl-15", Algorithm::tps_l, 1.0, 5.0, 13000, -1, -1));
  p.push_back(desk("desk-table2-efp-15", Algorithm::tps_ef, 1.0, 5.0, 10000, 10000, -1));
  p.push_back(desk("desk-table3-efp-11", Algorithm::tps_ef, 1.0, 1.0, 20000, 20000, -1));
  p.push_back(desk("desk-table3-esp-11", Algorithm::tps_es, 1.0, 1.0, 20000, 20000, 20000));
  {
    auto c = detail::linear_preset("desk-determinism", Algorithm::tps_ef, 400, 400, 4);
    c.T = 31;
    p.push_back(c);
  }
  {
    // Initial-sampling CDF comparison works off this preset with --dump-cdf.
    auto c = detail::nonlinear_preset("fig3-cdf", Algorithm::tps_l, 1.0, 5.0, 1000, -1, -1, 1);
    c.oracle_bins = 1000;
    p.push_back(c);
  }
  return p;
}

inline ExperimentConfig preset(const std::string& name) {
  // Alias kept for the published row label.
  const std::string wanted = (name == "table2-efp-55-1") ? "table2-efp-51" : name;
  for (auto& c : builtin_presets())
    if (c.name == wanted) return c;
  throw config_error("unknown preset: " + name);
}

inline std::string list_presets_text() {
  std::ostringstream os;
  os << "name                     model      algorithm  tau sigma        N        n       n'    M\n";
  for (const auto& c : builtin_presets()) {
    char buf[256];
    char ncol[24], npcol[24];
    if (c.filter_particles < 0) std::snprintf(ncol, sizeof(ncol), "NA");
    else std::snprintf(ncol, sizeof(ncol), "%lld", c.filter_particles);
    if (c.smoother_particles < 0) std::snprintf(npcol, sizeof(npcol), "NA");
    else std::snprintf(npcol, sizeof(npcol), "%lld", c.smoother_particles);
    std::snprintf(buf, sizeof(buf), "%-24s %-10s %-10s %3g %5g %8lld %8s %8s %4d\n",
                  c.name.c_str(), to_string(c.model), to_string(c.algorithm), c.tau,
                  c.sigma, c.particles, ncol, npcol, c.replications);
    os << buf;
  }
  return os.str();
}

}  // namespace tps
