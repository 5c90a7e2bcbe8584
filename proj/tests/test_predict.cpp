#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "staci/kdtree.hpp"
#include "staci/kernels.hpp"
#include "staci/predict.hpp"
#include "staci/rng.hpp"
#include "staci/training.hpp"

using namespace staci;

namespace {

std::vector<STPoint> uniform_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<STPoint> out(n);
  for (auto& p : out) p = STPoint{u(rng), u(rng), u(rng)};
  return out;
}

// Sort every index by (scaled squared distance, index) and keep the first D.
std::vector<std::size_t> sort_oracle(const STPoint& q, const std::vector<STPoint>& pts,
                                     std::size_t d, double rs, double rt) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double ds = ((pts[i].s1 - q.s1) * (pts[i].s1 - q.s1) +
                       (pts[i].s2 - q.s2) * (pts[i].s2 - q.s2)) / (rs * rs);
    const double dt = (pts[i].t - q.t) * (pts[i].t - q.t) / (rt * rt);
    all.emplace_back(ds + dt, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d; ++i) out.push_back(all[i].second);
  return out;
}

// Pool of pure-noise responses: y ~ N(0, 1), with mean 0 and sd 1 everywhere.
CalibrationPool noise_pool(std::size_t n, std::uint64_t seed) {
  CalibrationPool pool;
  pool.points = uniform_points(n, seed);
  Rng rng(seed + 1);
  std::normal_distribution<double> g(0.0, 1.0);
  pool.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < pool.y.size(); ++i) pool.y(i) = g(rng);
  pool.mean = Eigen::VectorXd::Zero(pool.y.size());
  pool.sd = Eigen::VectorXd::Ones(pool.y.size());
  for (std::size_t i = 0; i < n; ++i) pool.points[i].y = pool.y(static_cast<Eigen::Index>(i));
  return pool;
}

}  // namespace

TEST_SUITE("predict") {

TEST_CASE("predictive moments hand cases") {
  Eigen::MatrixXd same(3, 2);
  same << 1.0, -2.0, 1.0, -2.0, 1.0, -2.0;
  const PredictiveMoments a = predictive_moments(same, 0.3);
  CHECK(a.var(0) == 0.3);
  CHECK(a.var(1) == 0.3);
  CHECK(!a.single_particle);

  Eigen::MatrixXd two(2, 1);
  two << 0.0, 2.0;
  const PredictiveMoments b = predictive_moments(two, 0.0);
  CHECK(b.mean(0) == 1.0);
  CHECK(b.var(0) == 1.0);

  const PredictiveMoments c = predictive_moments(Eigen::MatrixXd::Constant(1, 4, 2.0), 0.5);
  CHECK(c.single_particle);
  CHECK(c.var == Eigen::VectorXd::Constant(4, 0.5));
  CHECK_THROWS_AS(predictive_moments(Eigen::MatrixXd(0, 3), 0.1), ParameterError);
  CHECK_THROWS_AS(predictive_moments(two, -1.0), ParameterError);
}

TEST_CASE("predictive moments match a two-pass loop") {
  Rng rng(3);
  std::normal_distribution<double> g(5.0, 2.0);
  Eigen::MatrixXd preds(7, 30);
  for (Eigen::Index i = 0; i < preds.size(); ++i) preds(i) = g(rng);
  const PredictiveMoments m = predictive_moments(preds, 0.2);
  for (Eigen::Index c = 0; c < 30; ++c) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < 7; ++r) mean += preds(r, c);
    mean /= 7.0;
    double var = 0.0;
    for (Eigen::Index r = 0; r < 7; ++r) var += (preds(r, c) - mean) * (preds(r, c) - mean);
    var = var / 7.0 + 0.2;
    CHECK(std::abs(m.mean(c) - mean) < 1e-10);
    CHECK(std::abs(m.var(c) - var) < 1e-10);
  }
}

TEST_CASE("identical particles carry only the nugget") {
  ModelConfig mc;
  mc.inr.latent_dim = 2;
  mc.inr.layers = 1;
  mc.inr.width = 4;
  mc.num_features = 5;
  const StaciModel model(mc);
  const Particle p = model.init_particle(4);
  const Ensemble e(std::vector<Particle>{p, p, p});
  const auto pts = uniform_points(6, 1);
  const PredictiveMoments m = posterior_mean_var(model, e, pts);
  CHECK((m.var.array() - model.hypers(p).tau2).abs().maxCoeff() < 1e-15);
  CHECK((m.mean - model.forward(p, pts)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("normal quantiles and credible intervals") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
  const auto [lo, hi] = credible_interval(0.0, 1.0, 0.05);
  CHECK(hi == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(lo == -hi);
  const auto [l1, h1] = credible_interval(2.0, 1.0, 0.3173);
  CHECK(h1 - 2.0 == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(2.0 - l1 == doctest::Approx(1.0).epsilon(1e-4));
  const auto [l0, h0] = credible_interval(3.5, 0.0, 0.1);
  CHECK(l0 == 3.5);
  CHECK(h0 == 3.5);
  CHECK_THROWS_AS(credible_interval(0.0, 1.0, 0.0), ParameterError);
  CHECK_THROWS_AS(normal_quantile(1.0), ParameterError);

  PredictiveMoments m;
  m.mean = Eigen::Vector2d(1.0, -1.0);
  m.var = Eigen::Vector2d(4.0, 0.25);
  const auto s = summarize(m, 0.05);
  CHECK(s[0].sd == 2.0);
  CHECK(s[1].upper == doctest::Approx(-1.0 + 0.5 * 1.959964).epsilon(1e-6));
  for (const auto& x : s) CHECK((x.lower <= x.mean && x.mean <= x.upper));
}

TEST_CASE("kd-tree agrees with brute force including ties") {
  std::vector<Point3> grid;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) grid.push_back({double(i), double(j), double(k)});
  const KdTree3 tree(grid);
  for (const Point3& q : {Point3{2.0, 2.0, 2.0}, Point3{0.5, 0.5, 0.5}, Point3{5.0, 0.0, 2.5}}) {
    for (std::size_t k : {1u, 7u, 27u, 100u}) {
      CHECK(tree.nearest(q, k) == brute_force_nearest(grid, q, k));
      CHECK(tree.nearest(q, k, 3) == brute_force_nearest(grid, q, k, 3));
    }
  }
  const auto brute = brute_force_nearest(grid, {2.0, 2.0, 2.0}, 7);
  CHECK(brute.front() == 2 * 36 + 2 * 6 + 2);  // the point itself
}

TEST_CASE("neighbor selection matches a full sort on both index paths") {
  for (std::size_t n : {500u, 3000u}) {
    const auto pts = uniform_points(n, n);
    const NeighborIndex index(pts, 0.2, 0.5);
    CHECK(index.uses_tree() == (n >= NeighborIndex::kBruteForceLimit));
    for (const auto& q : uniform_points(50, n + 1)) {
      CHECK(index.select(q, 10) == sort_oracle(q, pts, 10, 0.2, 0.5));
      CHECK(index.select(q, 1) == sort_oracle(q, pts, 1, 0.2, 0.5));
    }
  }
}

TEST_CASE("neighbor selection is invariant to joint range scaling") {
  const auto pts = uniform_points(2500, 5);
  for (const auto& q : uniform_points(30, 6)) {
    const auto base = neighbor_select(q, pts, 15, 0.3, 0.7);
    CHECK(base == neighbor_select(q, pts, 15, 0.3 * 4.0, 0.7 * 4.0));
    CHECK(base == neighbor_select(q, pts, 15, 0.3 / 9.0, 0.7 / 9.0));
  }
}

TEST_CASE("neighbor index rebuilds on range changes and checks counts") {
  const auto pts = uniform_points(2100, 7);
  NeighborIndex index(pts, 0.2, 0.2);
  const STPoint q{0.5, 0.5, 0.5};
  index.set_ranges(0.2, 2.0);
  CHECK(index.select(q, 12) == sort_oracle(q, pts, 12, 0.2, 2.0));
  index.set_ranges(0.2005, 2.0);  // within 1%: the index keeps its build-time ranges
  CHECK(index.rho_s() == 0.2005);
  CHECK(index.select(q, 12) == sort_oracle(q, pts, 12, 0.2, 2.0));
  index.set_ranges(0.1, 2.0);
  CHECK(index.select(q, 12) == sort_oracle(q, pts, 12, 0.1, 2.0));
  CHECK_THROWS_AS(index.select(q, 2101), ParameterError);
  CHECK_THROWS_AS(index.select(q, 2100, 0), ParameterError);
  CHECK(index.select(q, 2100).size() == 2100);
  CHECK_THROWS_AS(NeighborIndex(pts, 0.0, 1.0), ParameterError);

  const auto excluded = index.select(pts[10], 5, 10);
  CHECK(std::find(excluded.begin(), excluded.end(), 10u) == excluded.end());
}

TEST_CASE("conformal rank arithmetic") {
  CHECK(conformal_rank(19, 0.05) == 19);
  CHECK(conformal_rank(99, 0.05) == 95);
  CHECK(conformal_rank(10, 0.05) == 11);
  CHECK(conformal_rank(9, 0.1) == 9);
}

TEST_CASE("conformal band with equal scores") {
  const std::vector<double> y(30, 1.5), mean(30, 1.0), sd(30, 0.25);  // scores all 2
  const ConformalBand b = conformal_interval(4.0, 3.0, y, mean, sd, 0.05);
  CHECK(!b.fallback);
  CHECK(b.quantile == 2.0);
  CHECK(b.lower == -2.0);
  CHECK(b.upper == 10.0);
  CHECK(b.neighbors == 30);
}

TEST_CASE("K = 19 uses the largest neighbor score") {
  std::vector<double> y(19), mean(19, 0.0), sd(19, 1.0);
  for (int i = 0; i < 19; ++i) y[i] = 0.1 * (i + 1) * (i % 2 ? -1.0 : 1.0);
  const ConformalBand b = conformal_interval(0.0, 1.0, y, mean, sd, 0.05);
  CHECK(b.quantile == doctest::Approx(1.9));
}

TEST_CASE("too few neighbors fall back to the response range") {
  const std::vector<double> y{0.3, -1.0, 2.0, 0.5}, mean(4, 0.0), sd(4, 1.0);
  const ConformalBand b = conformal_interval(0.0, 1.0, y, mean, sd, 0.05);
  CHECK(b.fallback);
  CHECK(b.lower == -1.0);
  CHECK(b.upper == 2.0);
  CHECK_THROWS_AS(conformal_interval(0.0, 0.0, y, mean, sd, 0.05), ParameterError);
  const std::vector<double> bad_sd{1.0, 0.0, 1.0, 1.0};
  CHECK_THROWS_AS(conformal_scores(y, mean, bad_sd), ParameterError);
}

TEST_CASE("band contains the mean and scales with the query sd") {
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> y(60), mean(60), sd(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = g(rng);
    mean[i] = 0.3 * g(rng);
    sd[i] = 0.5 + std::abs(g(rng));
  }
  const ConformalBand a = conformal_interval(1.0, 1.0, y, mean, sd, 0.1);
  const ConformalBand b = conformal_interval(1.0, 2.5, y, mean, sd, 0.1);
  CHECK(a.lower <= 1.0);
  CHECK(a.upper >= 1.0);
  CHECK((b.upper - b.lower) == doctest::Approx(2.5 * (a.upper - a.lower)));
}

TEST_CASE("closed form agrees with the grid search") {
  Rng rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  int compared = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 40 + static_cast<std::size_t>(rep % 40);
    std::vector<double> y(k), mean(k), sd(k);
    for (std::size_t i = 0; i < k; ++i) {
      mean[i] = 0.2 * g(rng);
      sd[i] = u(rng);
      y[i] = mean[i] + sd[i] * g(rng);
    }
    const double qm = 0.3 * g(rng), qs = 0.4 * u(rng);
    const ConformalBand exact = conformal_interval(qm, qs, y, mean, sd, 0.1);
    const auto grid = conformal_interval_grid(qm, qs, y, mean, sd, 0.1, 2001);
    REQUIRE(grid.has_value());
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double spacing = (*hi - *lo) / 2000.0;
    // The grid spans the neighbor responses, so compare against the clipped band.
    CHECK(std::abs(grid->lower - std::max(exact.lower, *lo)) <= spacing + 1e-12);
    CHECK(std::abs(grid->upper - std::min(exact.upper, *hi)) <= spacing + 1e-12);
    ++compared;
  }
  CHECK(compared == 200);
}

TEST_CASE("marginal coverage on exchangeable data") {
  const CalibrationPool pool = noise_pool(6000, 10);
  const ConformalCalibrator cal(pool, 0.2, 0.2);
  const auto queries = uniform_points(2000, 11);
  Rng rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  int covered = 0;
  const auto bands = cal.bands(queries, Eigen::VectorXd::Zero(2000), Eigen::VectorXd::Ones(2000), 99, 0.05);
  for (const auto& b : bands) {
    const double y = g(rng);
    CHECK(!b.fallback);
    if (y >= b.lower && y <= b.upper) ++covered;
  }
  CHECK(covered / 2000.0 >= 0.94);
}

TEST_CASE("choose count: single candidate, dominance and plateau") {
  const CalibrationPool noise = noise_pool(2000, 20);
  const ConformalCalibrator cal(noise, 0.2, 0.2);
  const std::vector<std::size_t> one{42};
  CHECK(cal.choose_count(one, 0.05, 1) == 42);
  CHECK_THROWS_AS(cal.choose_count(std::vector<std::size_t>{}, 0.05, 1), ParameterError);

  // Two far-apart clusters: one fits perfectly, the other has scores of 5.
  CalibrationPool two;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 30; ++i)
      two.points.push_back(STPoint{c * 100.0 + 0.01 * i, 0.0, 0.0});
  two.y = Eigen::VectorXd::Zero(60);
  two.mean = Eigen::VectorXd::Zero(60);
  two.sd = Eigen::VectorXd::Ones(60);
  two.y.tail(30).setConstant(5.0);
  const ConformalCalibrator clusters(std::move(two), 1.0, 1.0);
  const std::vector<std::size_t> cand{50, 10};
  CHECK(clusters.choose_count(cand, 0.05, 3) == 10);

  const std::vector<std::size_t> wide{5, 10, 30, 50, 80};
  const std::size_t chosen = cal.choose_count(wide, 0.05, 4);
  CHECK(chosen >= 30);
  CHECK(chosen <= 80);
  CHECK(cal.choose_count(wide, 0.05, 4) == chosen);
}

TEST_CASE("calibration pool from moments") {
  auto pts = uniform_points(4, 30);
  for (auto& p : pts) p.y = p.s1;
  PredictiveMoments m;
  m.mean = Eigen::VectorXd::Zero(4);
  m.var = Eigen::VectorXd::Constant(4, 4.0);
  const CalibrationPool pool = make_calibration_pool(pts, m);
  CHECK(pool.sd == Eigen::VectorXd::Constant(4, 2.0));
  CHECK(pool.y(2) == pts[2].s1);
  m.mean = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(make_calibration_pool(pts, m), ShapeError);
}

TEST_CASE("kriging credible intervals cover at the nominal rate") {
  CovarianceParams p;
  p.sigma2 = 1.0;
  p.tau2 = 0.1;
  p.nu = 1.5;
  p.rho_s = 0.2;
  p.rho_t = 0.4;
  int covered = 0, total = 0;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    auto pts = uniform_points(2000, 40 + rep);
    const Eigen::VectorXd y = exact_gp_simulate(pts, p, {}, 50 + rep);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i].y = y(static_cast<Eigen::Index>(i));
    const std::span<const STPoint> train(pts.data(), 1000), test(pts.data() + 1000, 1000);
    const KrigingResult k = exact_gp_predict(train, test, p);
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto [lo, hi] = credible_interval(k.mean(r), std::sqrt(k.variance(r)), 0.05);
      if (*test[i].y >= lo && *test[i].y <= hi) ++covered;
      ++total;
    }
  }
  CHECK(total == 5000);
  CHECK(std::abs(covered / 5000.0 - 0.95) <= 0.02);
}

}  // TEST_SUITE
