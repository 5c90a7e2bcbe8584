#include <doctest.h>

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "staci/kernels.hpp"
#include "staci/rng.hpp"

using namespace staci;

namespace {

// K_nu(x) = int_0^inf exp(-x cosh u) cosh(nu u) du, trapezoid rule.
double bessel_k_integral(double nu, double x) {
  const double upper = std::acosh(60.0 / x + 1.0) + 1.0;
  const int n = 20000;
  const double h = upper / n;
  double s = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double u = k * h;
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    s += w * std::exp(-x * std::cosh(u)) * std::cosh(nu * u);
  }
  return s * h;
}

double matern_oracle(double d, double nu) {
  if (d == 0.0) return 1.0;
  const double x = std::sqrt(2.0 * nu) * d;
  return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) * bessel_k_integral(nu, x);
}

STPoint pt(double s1, double s2, double t, std::optional<double> y = std::nullopt) {
  return STPoint{s1, s2, t, y};
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matern at zero distance is one") {
  for (double nu : {0.5, 1.0, 1.5, 2.5, 3.7}) CHECK(matern_correlation(0.0, nu) == 1.0);
}

TEST_CASE("matern half-integer closed forms") {
  CHECK(matern_correlation(1.0, 0.5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  for (double d = 0.0; d <= 10.0; d += 0.05)
    CHECK(std::abs(matern_correlation(d, 0.5) - std::exp(-d)) < 1e-10);
  CHECK(matern_correlation(50.0, 1.5) < 1e-10);
}

TEST_CASE("matern agrees with a numeric Bessel integral") {
  for (double nu : {0.5, 0.8, 1.0, 1.5, 2.2, 2.5}) {
    for (double d : {0.01, 0.1, 0.5, 1.0, 2.0, 4.0}) {
      CAPTURE(nu);
      CAPTURE(d);
      CHECK(matern_correlation(d, nu) == doctest::Approx(matern_oracle(d, nu)).epsilon(1e-8));
    }
  }
}

TEST_CASE("matern is bounded and nonincreasing") {
  for (double nu : {0.5, 1.0, 1.5, 2.5}) {
    double prev = 1.0;
    for (double d = 0.0; d < 20.0; d += 0.01) {
      const double m = matern_correlation(d, nu);
      CHECK(m >= 0.0);
      CHECK(m <= prev + 1e-15);
      prev = m;
    }
  }
}

TEST_CASE("matern rejects bad smoothness") {
  CHECK_THROWS_AS(matern_correlation(1.0, 0.0), ParameterError);
  CHECK_THROWS_AS(matern_correlation(1.0, -1.0), ParameterError);
  CHECK_THROWS_AS(matern_correlation(1.0, std::nan("")), ParameterError);
  CHECK_THROWS_AS(matern_correlation(-1.0, 1.5), ParameterError);
}

TEST_CASE("space-time distance examples") {
  CovarianceParams p;
  const STPoint a = pt(0.1, 0.2, 0.3);
  CHECK(st_distance(a, a, p) == 0.0);

  p.rho_s = 0.5;
  p.rho_t = 1.0;
  CHECK(st_distance(pt(0.0, 0.0, 0.0), pt(0.3, 0.4, 0.0), p) == doctest::Approx(1.0));
  p.rho_t = 2.0;
  CHECK(st_distance(pt(0.5, 0.5, 1.0), pt(0.5, 0.5, 3.0), p) == doctest::Approx(1.0));

  p.rho_s = 0.0;
  CHECK_THROWS_AS(st_distance(a, a, p), ParameterError);
}

TEST_CASE("expanded distance examples") {
  CovarianceParams p;
  p.rho_l = 5.0;
  const STPoint a = pt(0.2, 0.7, 0.5);
  const STPoint b = pt(0.9, 0.1, 0.0);
  Eigen::VectorXd la(2), lb(2);
  la << 3.0, 4.0;
  lb << 0.0, 0.0;
  CHECK(expanded_distance(a, a, la, lb, p) == doctest::Approx(1.0));
  CHECK(expanded_distance(a, b, la, la, p) == doctest::Approx(st_distance(a, b, p)));

  Eigen::VectorXd shorter(1);
  shorter << 1.0;
  CHECK_THROWS_AS(expanded_distance(a, b, la, shorter, p), ShapeError);
}

TEST_CASE("expanded distance matches term-by-term sum and is a metric") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  CovarianceParams p;
  p.rho_s = 0.3;
  p.rho_t = 0.7;
  p.rho_l = 0.4;
  auto rand_point = [&] { return pt(u(rng), u(rng), u(rng)); };
  auto rand_latent = [&] {
    Eigen::VectorXd v(3);
    for (int j = 0; j < 3; ++j) v(j) = g(rng);
    return v;
  };
  for (int rep = 0; rep < 200; ++rep) {
    const STPoint a = rand_point(), b = rand_point(), c = rand_point();
    const Eigen::VectorXd la = rand_latent(), lb = rand_latent(), lc = rand_latent();
    double sum = 0.0;
    sum += (a.s1 - b.s1) * (a.s1 - b.s1) / (p.rho_s * p.rho_s);
    sum += (a.s2 - b.s2) * (a.s2 - b.s2) / (p.rho_s * p.rho_s);
    sum += (a.t - b.t) * (a.t - b.t) / (p.rho_t * p.rho_t);
    const double st = std::sqrt(sum);
    for (int j = 0; j < 3; ++j) sum += (la(j) - lb(j)) * (la(j) - lb(j)) / (p.rho_l * p.rho_l);
    const double dab = expanded_distance(a, b, la, lb, p);
    CHECK(dab == doctest::Approx(std::sqrt(sum)).epsilon(1e-13));
    CHECK(st_distance(a, b, p) == doctest::Approx(st).epsilon(1e-13));
    CHECK(dab >= st_distance(a, b, p) - 1e-15);
    CHECK(dab == expanded_distance(b, a, lb, la, p));
    CHECK(st_distance(a, b, p) == st_distance(b, a, p));
    const double dbc = expanded_distance(b, c, lb, lc, p);
    const double dac = expanded_distance(a, c, la, lc, p);
    CHECK(dac <= dab + dbc + 1e-12);
    CHECK(st_distance(a, c, p) <= st_distance(a, b, p) + st_distance(b, c, p) + 1e-12);
  }
}

TEST_CASE("simulate single point has variance sigma2 + tau2") {
  CovarianceParams p;
  p.sigma2 = 1.3;
  p.tau2 = 0.4;
  const std::vector<STPoint> one{pt(0.3, 0.3, 0.3)};
  std::vector<double> draws;
  for (std::uint64_t seed = 0; seed < 10000; ++seed)
    draws.push_back(exact_gp_simulate(one, p, {}, seed)(0));
  const auto [m, v] = oracle::mean_var(draws);
  const double target = p.sigma2 + p.tau2;
  // Var of the sample variance for a Gaussian is 2 s^4 / (n - 1).
  CHECK(std::abs(v - target) < 3.0 * target * std::sqrt(2.0 / 9999.0));
  CHECK(std::abs(m) < 3.0 * std::sqrt(target / 10000.0));
}

TEST_CASE("simulate degenerate cases") {
  const std::vector<STPoint> pts{pt(0.1, 0.1, 0.0), pt(0.5, 0.2, 0.5), pt(0.5, 0.2, 0.5)};
  CovarianceParams p;
  p.sigma2 = 0.0;
  p.tau2 = 0.0;
  CHECK(exact_gp_simulate(pts, p, {}, 3).cwiseAbs().maxCoeff() == 0.0);

  p.sigma2 = 2.0;
  const Eigen::VectorXd y = exact_gp_simulate(pts, p, {}, 4);
  CHECK(y(1) == y(2));

  const Eigen::VectorXd again = exact_gp_simulate(pts, p, {}, 4);
  CHECK(y == again);
}

TEST_CASE("simulate respects the size cap") {
  std::vector<STPoint> pts(11, pt(0.0, 0.0, 0.0));
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].s1 = 0.05 * static_cast<double>(i);
  CHECK_THROWS_AS(exact_gp_simulate(pts, CovarianceParams{}, {}, 1, 10), SizeError);
  CHECK_THROWS_AS(exact_gp_predict(pts, pts, CovarianceParams{}, {}, 10), SizeError);
}

TEST_CASE("simulate sample covariance matches the model") {
  CovarianceParams p;
  p.sigma2 = 1.0;
  p.tau2 = 0.2;
  p.nu = 1.5;
  p.rho_s = 0.3;
  p.rho_t = 0.5;
  const std::vector<STPoint> pts{pt(0.1, 0.1, 0.1), pt(0.2, 0.15, 0.1), pt(0.5, 0.5, 0.4),
                                 pt(0.9, 0.2, 0.8), pt(0.12, 0.1, 0.3)};
  const int reps = 20000;
  Eigen::MatrixXd draws(reps, 5);
  for (int r = 0; r < reps; ++r)
    draws.row(r) = exact_gp_simulate(pts, p, {}, static_cast<std::uint64_t>(r) + 100).transpose();
  const Eigen::MatrixXd cov = (draws.transpose() * draws) / reps;  // mean zero is known

  Eigen::MatrixXd target(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      target(i, j) = p.sigma2 * matern_correlation(st_distance(pts[i], pts[j], p), p.nu) +
                     (i == j ? p.tau2 : 0.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      // Var(x_i x_j) = S_ii S_jj + S_ij^2 for zero-mean Gaussians.
      const double se =
          std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) / reps);
      CAPTURE(i);
      CAPTURE(j);
      CHECK(std::abs(cov(i, j) - target(i, j)) < 3.0 * se);
    }
}

TEST_CASE("simulate with latent field uses the expanded distance") {
  CovarianceParams p;
  p.tau2 = 0.0;
  p.rho_l = 0.1;
  // Same coordinates but far-apart latent values decorrelate weakly except through L.
  const LatentFn latent = [](const STPoint& s) {
    Eigen::VectorXd v(1);
    v(0) = s.s1 > 0.5 ? 10.0 : 0.0;
    return v;
  };
  const std::vector<STPoint> pts{pt(0.5, 0.5, 0.5), pt(0.5000001, 0.5, 0.5)};
  const Eigen::MatrixXd k = signal_covariance(pts, p, latent);
  CHECK(k(0, 1) < 1e-10);
  const Eigen::MatrixXd k0 = signal_covariance(pts, p);
  CHECK(k0(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("kriging interpolates without nugget") {
  CovarianceParams p;
  p.tau2 = 0.0;
  std::vector<STPoint> train{pt(0.1, 0.2, 0.0, 1.5), pt(0.6, 0.4, 0.5, -0.7),
                             pt(0.3, 0.9, 1.0, 0.2)};
  const std::vector<STPoint> test{pt(0.6, 0.4, 0.5)};
  const KrigingResult r = exact_gp_predict(train, test, p);
  CHECK(r.mean(0) == doctest::Approx(-0.7).epsilon(1e-6));
  CHECK(std::abs(r.variance(0)) < 1e-6);
}

TEST_CASE("kriging reverts to the prior far away") {
  CovarianceParams p;
  p.sigma2 = 1.7;
  p.tau2 = 0.3;
  std::vector<STPoint> train{pt(0.1, 0.2, 0.0, 1.5), pt(0.6, 0.4, 0.5, -0.7)};
  const double far = 60.0 * std::max(p.rho_s, p.rho_t);
  const std::vector<STPoint> test{pt(far, far, far)};
  const KrigingResult r = exact_gp_predict(train, test, p);
  CHECK(std::abs(r.mean(0)) < 1e-6);
  CHECK(std::abs(r.variance(0) - (p.sigma2 + p.tau2)) < 1e-6);
}

TEST_CASE("kriging matches a dense-solve reimplementation") {
  CovarianceParams p;
  p.sigma2 = 1.2;
  p.tau2 = 0.15;
  p.nu = 2.5;
  p.rho_s = 0.25;
  p.rho_t = 0.6;
  std::vector<STPoint> train;
  for (int i = 0; i < 50; ++i) train.push_back(pt((i % 7) / 6.0, (i / 7) / 7.0, (i % 3) / 2.0));
  const Eigen::VectorXd y = exact_gp_simulate(train, p, {}, 77);
  for (int i = 0; i < 50; ++i) train[static_cast<std::size_t>(i)].y = y(i);
  const std::vector<STPoint> test{pt(0.33, 0.41, 0.2), pt(0.9, 0.05, 0.75), pt(0.5, 0.5, 0.5)};

  // Dense solve with explicit loops.
  Eigen::MatrixXd k(50, 50);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j)
      k(i, j) = p.sigma2 * matern_correlation(st_distance(train[i], train[j], p), p.nu) +
                (i == j ? p.tau2 : 0.0);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
  const KrigingResult r = exact_gp_predict(train, test, p);
  for (std::size_t q = 0; q < test.size(); ++q) {
    Eigen::VectorXd c(50);
    for (int i = 0; i < 50; ++i)
      c(i) = p.sigma2 * matern_correlation(st_distance(test[q], train[i], p), p.nu);
    const Eigen::VectorXd w = lu.solve(c);
    const auto qi = static_cast<Eigen::Index>(q);
    CHECK(r.mean(qi) == doctest::Approx(w.dot(y)).epsilon(1e-8));
    CHECK(r.variance(qi) == doctest::Approx(p.sigma2 + p.tau2 - c.dot(w)).epsilon(1e-8));
    CHECK(r.variance(qi) >= 0.0);
    CHECK(r.variance(qi) <= p.sigma2 + p.tau2 + 1e-8);
  }
}

TEST_CASE("jittered cholesky handles a zero matrix and rejects indefinite ones") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 3);
  CHECK(jittered_cholesky(zero, 0.0).cwiseAbs().maxCoeff() == 0.0);
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(jittered_cholesky(bad, 1.0), NumericalError);
}

TEST_CASE("covariance params validation") {
  CovarianceParams p;
  CHECK_NOTHROW(p.validate());
  p.nu = 0.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = CovarianceParams{};
  p.sigma2 = -1.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = CovarianceParams{};
  p.rho_l = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(p.validate(), ParameterError);
}

}  // TEST_SUITE
