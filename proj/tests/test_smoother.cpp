#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "support.hpp"
#include "tps/baselines.hpp"
#include "tps/smoother.hpp"

using namespace tps;

namespace {

ObservationSeq fixed_obs(const ModelSpec& model, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return simulate(model, rng).second;
}

// log of the unnormalised joint p(x_{0:T}, y_{0:T}) along one path.
double log_joint(const ModelSpec& model, const ObservationSeq& obs,
                 const std::vector<double>& x) {
  double s = model.log_prior(x[0]) + model.log_emit(0, x[0], obs.y[0]);
  for (int t = 1; t <= model.T; ++t) {
    s += model.log_trans(t, x[static_cast<std::size_t>(t) - 1], x[static_cast<std::size_t>(t)]);
    s += model.log_emit(t, x[static_cast<std::size_t>(t)], obs.y[static_cast<std::size_t>(t)]);
  }
  return s;
}

// Composes leaf densities, every merge increment and the root correction
// along a path; up to one constant this must reproduce log_joint.
double compose_along_tree(const TargetFamily& fam, const ModelSpec& model,
                          const ObservationSeq& obs, const std::vector<double>& x) {
  const Tree tree = build_tree(model.T);
  double s = 0.0;
  for (int t = 0; t <= model.T; ++t)
    s += leaf_log_density(fam, t, model, obs, x[static_cast<std::size_t>(t)]);
  for (const auto& nd : tree.nodes) {
    if (nd.leaf()) continue;
    s += merge_log_weight(fam, model, obs, nd, x[static_cast<std::size_t>(nd.cut) - 1],
                          x[static_cast<std::size_t>(nd.cut)]);
  }
  s += root_log_correction(fam, model, obs, x.front(), x.back());
  return s;
}

std::vector<double> weighted_step_means(const WeightedPath& path) {
  const auto probs = normalize(path.log_weights).probs;
  std::vector<double> out(static_cast<std::size_t>(path.width()));
  for (int t = 0; t < path.width(); ++t) {
    double m = 0.0;
    for (int i = 0; i < path.n; ++i) m += probs[static_cast<std::size_t>(i)] * path.state(i, t);
    out[static_cast<std::size_t>(t)] = m;
  }
  return out;
}

}  // namespace

TEST_CASE("tps-l leaves reproduce the conjugate posteriors (linear model)", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(4);
  ObservationSeq obs;
  obs.y = {1.0, -0.4, 2.2, 0.0, 0.6};
  const TargetFamily fam = make_tpsl_family();

  Rng rng = make_stream(301);
  const int n = 20000;
  {
    // f_0 is proportional to the prior times emission: N(y0/2, 1/2)
    const WeightedPath wp = leaf_sample(fam, 0, model, obs, n, rng);
    const Moments mo = weighted_moments(wp.states, std::vector<double>(wp.states.size(), 1.0 / n));
    CHECK(std::abs(mo.mean - 0.5) < 3.0 * std::sqrt(0.5 / n) + 1e-3);
    CHECK(std::abs(mo.var - 0.5) < 0.03);
  }
  {
    // f_j for j != 0 is the emission likelihood alone: N(y_j, 1)
    const WeightedPath wp = leaf_sample(fam, 2, model, obs, n, rng);
    const Moments mo = weighted_moments(wp.states, std::vector<double>(wp.states.size(), 1.0 / n));
    CHECK(std::abs(mo.mean - 2.2) < 3.0 * std::sqrt(1.0 / n) + 1e-3);
    CHECK(std::abs(mo.var - 1.0) < 0.05);
  }
  // leaf normaliser of f_0 equals the marginal density of y0: N(0, 2)
  const LeafTarget lt = build_leaf_target(fam, 0, model, obs);
  CHECK(lt.log_normalizer == Catch::Approx(normal_log_pdf(1.0, 0.0, std::sqrt(2.0))).margin(1e-6));
}

TEST_CASE("tps-l leaf handles a bimodal emission", "[smoother]") {
  const ModelSpec model = nonlinear_benchmark_model(4, 1.0, 1.0);
  ObservationSeq obs;
  obs.y = {5.0, 5.0, 5.0, 5.0, 5.0};  // emission mean x^2/20 = 5 at |x| = 10
  const TargetFamily fam = make_tpsl_family();
  Rng rng = make_stream(303);
  const WeightedPath wp = leaf_sample(fam, 1, model, obs, 20000, rng);
  int below = 0, above = 0;
  for (double x : wp.states) {
    if (x < -5.0) ++below;
    if (x > 5.0) ++above;
  }
  // both modes populated, roughly evenly by symmetry
  CHECK(below + above == 20000);
  CHECK(std::abs(below - above) < 5.0 * std::sqrt(20000.0 * 0.25));
}

TEST_CASE("estimate leaves draw from their own cdf", "[smoother]") {
  Rng rng = make_stream(307);
  std::normal_distribution<double> nd(1.0, 2.0);
  std::vector<double> xs(3000);
  for (double& v : xs) v = nd(rng);
  const std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
  std::vector<DensityEstimate> filter(3, DensityEstimate{grid_from_samples(xs, w, 128)});
  const TargetFamily fam = make_tpsef_family(std::move(filter));
  const ModelSpec model = linear_gaussian_model(2);
  ObservationSeq obs;
  obs.y = {0.0, 0.0, 0.0};
  const int n = 10000;
  const WeightedPath wp = leaf_sample(fam, 1, model, obs, n, rng);
  std::vector<double> sorted(wp.states);
  std::sort(sorted.begin(), sorted.end());
  const auto& est = fam.filter[1];
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = est.cdf(sorted[static_cast<std::size_t>(i)]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(f - static_cast<double>(i + 1) / n));
  }
  CHECK(d < std::sqrt(std::log(2.0 / 0.01) / (2.0 * n)));
}

TEST_CASE("merge increments", "[smoother]") {
  const testsup::ToyHmm toy;
  const ModelSpec model = toy.model();
  const ObservationSeq obs = toy.observations();
  TreeNode node{0, 1, 1, -1, -1};

  SECTION("tps-l multiplies by the bridging transition only") {
    const TargetFamily fam = make_tpsl_family();
    // transition probability 0 -> 1 is 0.3
    CHECK(merge_log_weight(fam, model, obs, node, 0.2, 0.8) ==
          Catch::Approx(std::log(0.3)).epsilon(1e-12));
    const ModelSpec lin = linear_gaussian_model(3);
    const ObservationSeq lobs = fixed_obs(lin, 311);
    const TreeNode n2{2, 3, 3, -1, -1};
    CHECK(merge_log_weight(fam, lin, lobs, n2, 0.7, -0.1) ==
          Catch::Approx(lin.log_trans(3, 0.7, -0.1)).epsilon(1e-12));
  }

  SECTION("tps-es with identical filter and smoother estimates at k-1 reduces to tps-ef") {
    const testsup::ToyExact exact = testsup::enumerate_toy(toy);
    std::vector<DensityEstimate> filter, smoother;
    for (int t = 0; t <= 3; ++t) {
      filter.emplace_back(testsup::toy_cell_grid(exact.filter[static_cast<std::size_t>(t)]));
      smoother.emplace_back(testsup::toy_cell_grid(exact.filter[static_cast<std::size_t>(t)]));
    }
    const TargetFamily ef = make_tpsef_family(filter);
    const TargetFamily es = make_tpses_family(filter, smoother);
    for (double a : {0.1, 0.9}) {
      for (double b : {0.2, 1.3}) {
        CHECK(merge_log_weight(es, model, obs, node, a, b) ==
              Catch::Approx(merge_log_weight(ef, model, obs, node, a, b)).epsilon(1e-12));
      }
    }
  }

  SECTION("vanishing denominator kills the particle instead of producing NaN") {
    std::vector<DensityEstimate> filter(4, DensityEstimate{testsup::toy_cell_grid({1.0, 0.0})});
    std::vector<DensityEstimate> smoother(4, DensityEstimate{testsup::toy_cell_grid({0.0, 1.0})});
    const TargetFamily es = make_tpses_family(filter, smoother);
    const double w = merge_log_weight(es, model, obs, node, 0.8, 0.2);
    CHECK(w == neg_inf);
    CHECK_FALSE(std::isnan(w));
  }
}

TEST_CASE("single-node tree returns the exact posterior for tps-l", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(0);
  ObservationSeq obs;
  obs.y = {1.6};
  const TpsResult res = tps_run(model, obs, make_tpsl_family(), 40000, TpsOptions{}, 313);
  REQUIRE(res.path.width() == 1);
  const Moments mo =
      weighted_moments(res.path.states, normalize(res.path.log_weights).probs);
  CHECK(std::abs(mo.mean - 0.8) < 0.02);   // N(y0/2, 1/2)
  CHECK(std::abs(mo.var - 0.5) < 0.02);
}

TEST_CASE("evaluation order follows the post-order computational flow", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(5);
  const ObservationSeq obs = fixed_obs(model, 317);
  std::vector<std::pair<int, int>> order;
  tps_run(model, obs, make_tpsl_family(), 50, TpsOptions{}, 319,
          [&](const TreeNode& nd, const WeightedPath&) { order.emplace_back(nd.j, nd.l); });
  const std::vector<std::pair<int, int>> expected{
      {0, 0}, {1, 1}, {0, 1}, {2, 2}, {3, 3}, {2, 3}, {0, 3}, {4, 4}, {5, 5}, {4, 5}, {0, 5}};
  CHECK(order == expected);
}

TEST_CASE("fixed seeds reproduce runs bit for bit", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(15);
  const ObservationSeq obs = fixed_obs(model, 323);
  const TpsResult a = tps_run(model, obs, make_tpsl_family(), 500, TpsOptions{}, 327);
  const TpsResult b = tps_run(model, obs, make_tpsl_family(), 500, TpsOptions{}, 327);
  CHECK(a.path.states == b.path.states);
  CHECK(a.log_normalizer == b.log_normalizer);
  const TpsResult c = tps_run(model, obs, make_tpsl_family(), 500, TpsOptions{}, 331);
  CHECK(a.path.states != c.path.states);
}

TEST_CASE("tps-ef with exact Kalman marginals matches the RTS smoother", "[smoother][slow]") {
  const ModelSpec model = linear_gaussian_model(3);
  const ObservationSeq obs = fixed_obs(model, 337);
  const KalmanResult kf = kalman_filter(*model.linear, obs);
  const GaussianBelief rts = rts_smoother(model, obs);

  std::vector<DensityEstimate> filter;
  for (int t = 0; t <= 3; ++t)
    filter.emplace_back(NormalFit{kf.filter.mean[static_cast<std::size_t>(t)],
                                  kf.filter.var[static_cast<std::size_t>(t)]});
  const TargetFamily fam = make_tpsef_family(std::move(filter));

  const int reps = 40, n = 2000;
  std::vector<std::vector<double>> err(4);
  for (int r = 0; r < reps; ++r) {
    const TpsResult res =
        tps_run(model, obs, fam, n, TpsOptions{}, mix64(341 + static_cast<std::uint64_t>(r)));
    const auto means = weighted_step_means(res.path);
    for (int t = 0; t <= 3; ++t)
      err[static_cast<std::size_t>(t)].push_back(means[static_cast<std::size_t>(t)] -
                                                 rts.mean[static_cast<std::size_t>(t)]);
  }
  for (int t = 0; t <= 3; ++t) {
    const auto st = testsup::rep_stats(err[static_cast<std::size_t>(t)]);
    CHECK(std::abs(st.mean) <= 3.0 * st.se + 1e-9);
  }
}

TEST_CASE("weight cancellation reproduces the root target for all families", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(3);
  const ObservationSeq obs = fixed_obs(model, 347);
  Rng rng = make_stream(349);

  // estimate-based families built from a quick filter run
  const FilterOutput fo = bootstrap_pf(model, obs, 800, false, ResampleScheme::systematic, rng);
  std::vector<GridDensity> fgrids, sgrids;
  for (int t = 0; t <= 3; ++t) {
    const auto& xs = fo.particles[static_cast<std::size_t>(t)];
    const std::vector<double> w(xs.size(), 1.0 / static_cast<double>(xs.size()));
    fgrids.push_back(grid_from_samples(xs, w, 64));
    // a second, deliberately different sample set for the smoother grid
    std::vector<double> shifted = xs;
    for (double& v : shifted) v += 0.05;
    sgrids.push_back(grid_from_samples(shifted, w, 48));
  }
  std::vector<DensityEstimate> mix_f, mix_s;
  for (int t = 0; t <= 3; ++t) {
    mix_f.emplace_back(mixture_filter_estimate(fgrids[static_cast<std::size_t>(t)],
                                               sgrids[static_cast<std::size_t>(t)], 0.95));
    mix_s.emplace_back(mixture_smoother_estimate(sgrids[static_cast<std::size_t>(t)],
                                                 fgrids[static_cast<std::size_t>(t)], 0.95));
  }

  std::vector<TargetFamily> fams;
  fams.push_back(make_tpsl_family());
  fams.push_back(make_tpsef_family(
      std::vector<DensityEstimate>(fgrids.begin(), fgrids.end())));
  fams.push_back(make_tpses_family(mix_f, mix_s));

  for (const auto& fam : fams) {
    // paths drawn from the leaf targets themselves, so every estimate is
    // positive along them
    auto draw_path = [&](Rng& r) {
      std::vector<double> x(4);
      for (int t = 0; t <= 3; ++t)
        x[static_cast<std::size_t>(t)] = build_leaf_target(fam, t, model, obs).density.sample(r);
      return x;
    };
    const std::vector<double> ref = draw_path(rng);
    const double offset = compose_along_tree(fam, model, obs, ref) - log_joint(model, obs, ref);
    for (int k = 0; k < 100; ++k) {
      const std::vector<double> x = draw_path(rng);
      const double diff = compose_along_tree(fam, model, obs, x) - log_joint(model, obs, x);
      REQUIRE(std::abs(diff - offset) < 1e-9);
    }
  }
}

TEST_CASE("toy model: every family matches exact enumeration at the root", "[smoother][slow]") {
  const testsup::ToyHmm toy;
  const testsup::ToyExact exact = testsup::enumerate_toy(toy);
  const ModelSpec model = toy.model();
  const ObservationSeq obs = toy.observations();

  std::vector<DensityEstimate> filter, smoother;
  for (int t = 0; t <= 3; ++t) {
    filter.emplace_back(testsup::toy_cell_grid(exact.filter[static_cast<std::size_t>(t)]));
    smoother.emplace_back(testsup::toy_cell_grid(exact.smooth[static_cast<std::size_t>(t)]));
  }

  std::vector<TargetFamily> fams(3);
  fams[0] = make_tpsl_family();
  fams[0].leaf_grid_bins = 4096;  // shrink the straddling-bin bias of the step leaf
  fams[1] = make_tpsef_family(filter);
  fams[2] = make_tpses_family(filter, smoother);

  const int reps = 200, n = 600;
  for (std::size_t f = 0; f < fams.size(); ++f) {
    std::vector<std::vector<double>> mass1(4);
    std::vector<double> zhat;
    for (int r = 0; r < reps; ++r) {
      const TpsResult res = tps_run(model, obs, fams[f], n, TpsOptions{},
                                    mix64(353 + 1000 * f + static_cast<std::uint64_t>(r)));
      const auto probs = normalize(res.path.log_weights).probs;
      for (int t = 0; t <= 3; ++t) {
        std::vector<double> col(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = res.path.state(i, t);
        mass1[static_cast<std::size_t>(t)].push_back(testsup::cell1_mass(col, probs));
      }
      zhat.push_back(std::exp(res.log_normalizer));
    }
    for (int t = 0; t <= 3; ++t) {
      const auto st = testsup::rep_stats(mass1[static_cast<std::size_t>(t)]);
      INFO("family " << f << " t " << t);
      CHECK(std::abs(st.mean - exact.smooth[static_cast<std::size_t>(t)][1]) <=
            3.0 * st.se + 2e-3);
    }
    // product of mean unnormalised merge weights (plus leaf masses)
    // estimates the likelihood
    const auto sz = testsup::rep_stats(zhat);
    INFO("family " << f << " normalizing constant");
    CHECK(std::abs(sz.mean - exact.likelihood) <= 3.0 * sz.se + 2e-3 * exact.likelihood);
  }
}

TEST_CASE("tps-es roughly preserves marginals at every level", "[smoother][slow]") {
  const ModelSpec model = linear_gaussian_model(7);
  const ObservationSeq obs = fixed_obs(model, 359);
  const KalmanResult kf = kalman_filter(*model.linear, obs);
  const GaussianBelief rts = rts_smoother(model, obs);

  // exact filter / smoother targets: merges should leave every marginal at
  // its smoothing law, so node means match leaf means up to MC noise
  std::vector<DensityEstimate> filter, smoother;
  for (int t = 0; t <= 7; ++t) {
    filter.emplace_back(NormalFit{kf.filter.mean[static_cast<std::size_t>(t)],
                                  kf.filter.var[static_cast<std::size_t>(t)]});
    smoother.emplace_back(
        NormalFit{rts.mean[static_cast<std::size_t>(t)], rts.var[static_cast<std::size_t>(t)]});
  }
  const TargetFamily fam = make_tpses_family(filter, smoother);

  const int reps = 40, n = 3000;
  // diffs[node][index] across reps
  std::map<std::pair<int, int>, std::map<int, std::vector<double>>> diffs;
  for (int r = 0; r < reps; ++r) {
    std::map<int, double> leaf_mean;
    tps_run(model, obs, fam, n, TpsOptions{}, mix64(367 + static_cast<std::uint64_t>(r)),
            [&](const TreeNode& nd, const WeightedPath& wp) {
              const auto means = weighted_step_means(wp);
              if (nd.leaf()) {
                leaf_mean[nd.j] = means[0];
                return;
              }
              for (int t = nd.j; t <= nd.l; ++t)
                diffs[{nd.j, nd.l}][t].push_back(means[static_cast<std::size_t>(t - nd.j)] -
                                                 leaf_mean[t]);
            });
  }
  for (const auto& [node, by_index] : diffs) {
    for (const auto& [t, v] : by_index) {
      const auto st = testsup::rep_stats(v);
      INFO("node [" << node.first << ":" << node.second << "] index " << t);
      CHECK(std::abs(st.mean) <= 3.5 * st.se + 1e-9);
    }
  }
}

TEST_CASE("degenerate merge names the failing node", "[smoother]") {
  const testsup::ToyHmm toy;
  const ModelSpec model = toy.model();
  ObservationSeq obs = toy.observations();
  obs.y.resize(2);
  ModelSpec m2 = model;
  m2.T = 1;
  // smoother mass sits where the filter estimate at the cut vanishes
  std::vector<DensityEstimate> filter{testsup::toy_cell_grid({0.5, 0.5}),
                                      testsup::toy_cell_grid({1.0, 0.0})};
  std::vector<DensityEstimate> smoother{testsup::toy_cell_grid({0.5, 0.5}),
                                        testsup::toy_cell_grid({0.0, 1.0})};
  const TargetFamily fam = make_tpses_family(filter, smoother);
  try {
    tps_run(m2, obs, fam, 200, TpsOptions{}, 373);
    FAIL("expected degenerate_error");
  } catch (const degenerate_error& e) {
    CHECK(std::string(e.what()).find("[0:1]") != std::string::npos);
  }
}

TEST_CASE("killed particles are counted per node", "[smoother]") {
  const testsup::ToyHmm toy;
  const ModelSpec model = toy.model();
  const ObservationSeq obs = toy.observations();
  const testsup::ToyExact exact = testsup::enumerate_toy(toy);
  // filter estimate at t=1 only covers cell 0; smoother draws hit cell 1 too
  std::vector<DensityEstimate> filter{testsup::toy_cell_grid(exact.filter[0]),
                                      testsup::toy_cell_grid({1.0, 0.0}),
                                      testsup::toy_cell_grid(exact.filter[2]),
                                      testsup::toy_cell_grid(exact.filter[3])};
  std::vector<DensityEstimate> smoother;
  for (int t = 0; t <= 3; ++t)
    smoother.emplace_back(testsup::toy_cell_grid(exact.smooth[static_cast<std::size_t>(t)]));
  const TargetFamily fam = make_tpses_family(filter, smoother);
  const TpsResult res = tps_run(model, obs, fam, 2000, TpsOptions{}, 379);
  int killed = 0;
  for (const auto& d : res.diagnostics) killed += d.killed;
  CHECK(killed > 0);
}

TEST_CASE("ess trigger suppresses resampling below threshold", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(3);
  const ObservationSeq obs = fixed_obs(model, 383);
  TpsOptions opt;
  opt.ess_trigger = 1e-6;  // effectively never resample
  const TpsResult res = tps_run(model, obs, make_tpsl_family(), 400, opt, 389);
  bool any_nonzero = false;
  for (double lw : res.path.log_weights) any_nonzero |= (lw != 0.0);
  CHECK(any_nonzero);
  // default mode resamples at the root: uniform weights out
  const TpsResult def = tps_run(model, obs, make_tpsl_family(), 400, TpsOptions{}, 389);
  for (double lw : def.path.log_weights) REQUIRE(lw == 0.0);
}

TEST_CASE("tps_run validates estimate coverage", "[smoother]") {
  const ModelSpec model = linear_gaussian_model(3);
  const ObservationSeq obs = fixed_obs(model, 397);
  std::vector<DensityEstimate> too_few(2, DensityEstimate{NormalFit{0.0, 1.0}});
  CHECK_THROWS_AS(tps_run(model, obs, make_tpsef_family(too_few), 100, TpsOptions{}, 401),
                  config_error);
}
