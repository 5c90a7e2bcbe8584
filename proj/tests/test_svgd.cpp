#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "staci/rng.hpp"
#include "staci/svgd.hpp"
#include "staci/training.hpp"

using namespace staci;

namespace {

Ensemble random_ensemble(std::size_t m, Eigen::Index dim, std::uint64_t seed, double mean = 0.0,
                         double sd = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(mean, sd);
  std::vector<Particle> ps(m);
  for (auto& p : ps) {
    p.theta.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) p.theta(i) = g(rng);
  }
  return Ensemble(std::move(ps));
}

GaussianTarget gaussian_1d(double mean, double var) {
  return GaussianTarget(Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, var));
}

double kappa(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double h2) {
  return std::exp(-(a - b).squaredNorm() / (2.0 * h2));
}

// Target whose gradient turns non-finite for particle coordinates above 100.
class ExplodingTarget final : public SvgdTarget {
 public:
  std::size_t data_size() const override { return 1; }
  LogJoint log_joint_grad(const Particle& p, std::span<const std::size_t>) const override {
    const double v = p.theta(0) > 100.0 ? std::nan("") : 1.0;
    return LogJoint{0.0, Eigen::VectorXd::Constant(p.theta.size(), v)};
  }
};

std::vector<STPoint> toy_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<STPoint> out(n);
  for (auto& p : out) p = STPoint{u(rng), u(rng), u(rng), std::sin(6.0 * u(rng))};
  return out;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.inr.backbone = Backbone::FFNP;
  c.inr.layers = 1;
  c.inr.width = 4;
  c.inr.latent_dim = 1;
  c.inr.ffnp_freq_count = 2;
  c.num_features = 6;
  return c;
}

}  // namespace

TEST_SUITE("svgd") {

TEST_CASE("single particle kernel") {
  Eigen::MatrixXd x(1, 3);
  x << 0.4, -1.0, 2.0;
  const KernelEval k = rbf_kernel(x, Bandwidth::median());
  CHECK(k.k.rows() == 1);
  CHECK(k.k(0, 0) == 1.0);
  CHECK(k.repulsion.cwiseAbs().maxCoeff() == 0.0);
  Eigen::MatrixXd score(1, 3);
  score << 1.5, 2.5, -3.5;
  CHECK(svgd_direction(x, score, Bandwidth::median()) == score);
  CHECK_THROWS_AS(rbf_kernel(Eigen::MatrixXd(0, 3), Bandwidth::median()), ParameterError);
}

TEST_CASE("fixed bandwidth pair kernel") {
  Eigen::MatrixXd x(2, 2);
  x << 0.0, 0.0, 0.3, 0.4;
  const KernelEval k = rbf_kernel(x, Bandwidth::fixed(0.2));
  CHECK(k.h2 == 0.2);
  CHECK(k.k(0, 1) == doctest::Approx(std::exp(-0.25 / 0.4)).epsilon(1e-15));
  CHECK(k.k(1, 0) == k.k(0, 1));
  CHECK_THROWS_AS(rbf_kernel(x, Bandwidth::fixed(0.0)), ParameterError);
}

TEST_CASE("median heuristic bandwidth") {
  const Ensemble e = random_ensemble(6, 4, 3);
  const Eigen::MatrixXd x = e.thetas();
  std::vector<double> d2;
  for (int i = 0; i < 6; ++i)
    for (int j = i + 1; j < 6; ++j) d2.push_back((x.row(i) - x.row(j)).squaredNorm());
  std::sort(d2.begin(), d2.end());
  // 15 pairs, odd count: the middle element.
  const double expected = d2[7] / (2.0 * std::log(7.0));
  CHECK(rbf_kernel(x, Bandwidth::median()).h2 == doctest::Approx(expected).epsilon(1e-14));

  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(4, 2, 1.5);
  const KernelEval k = rbf_kernel(same, Bandwidth::median());
  CHECK(k.h2 == 1e-12);
  CHECK(k.k == Eigen::MatrixXd::Ones(4, 4));
  CHECK(k.repulsion.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kernel matrix is symmetric PSD with unit diagonal") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Eigen::MatrixXd x = random_ensemble(8, 5, s).thetas();
    const KernelEval k = rbf_kernel(x, Bandwidth::median());
    CHECK((k.k - k.k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(k.k.diagonal() == Eigen::VectorXd::Ones(8));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k.k);
    CHECK(eig.eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("kernel gradient term matches finite differences") {
  const Eigen::MatrixXd x = random_ensemble(5, 3, 11).thetas();
  const double h2 = 0.7;
  const KernelEval k = rbf_kernel(x, Bandwidth::fixed(h2));
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd fd = Eigen::VectorXd::Zero(3);
    for (int j = 0; j < 5; ++j) {
      fd += oracle::central_difference(
          [&](const Eigen::VectorXd& xj) { return kappa(xj, x.row(i).transpose(), h2); },
          x.row(j).transpose(), 1e-6);
    }
    CHECK((k.repulsion.row(i).transpose() - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("coincident particles average their scores") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(2, 3, -0.2);
  Eigen::MatrixXd score(2, 3);
  score << 1.0, 2.0, 3.0, -1.0, 0.0, 5.0;
  const Eigen::MatrixXd phi = svgd_direction(x, score, Bandwidth::median());
  const Eigen::RowVectorXd avg = score.colwise().mean();
  CHECK((phi.row(0) - avg).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((phi.row(1) - avg).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("direction matches a double-loop oracle") {
  const Ensemble e = random_ensemble(3, 4, 21);
  const Eigen::MatrixXd x = e.thetas();
  Eigen::MatrixXd score = random_ensemble(3, 4, 22).thetas();
  const double h2 = rbf_kernel(x, Bandwidth::median()).h2;
  const Eigen::MatrixXd phi = svgd_direction(x, score, Bandwidth::median());
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(4);
    for (int j = 0; j < 3; ++j) {
      const double kij = kappa(x.row(j).transpose(), x.row(i).transpose(), h2);
      ref += kij * score.row(j).transpose();
      ref += kij * (x.row(i) - x.row(j)).transpose() / h2;
    }
    ref /= 3.0;
    CHECK((phi.row(i).transpose() - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("one particle direction is the log-joint gradient") {
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.3, 0.3, 1.0;
  const GaussianTarget target(Eigen::Vector2d(1.0, -1.0), cov);
  Ensemble e = random_ensemble(1, 2, 4);
  const std::vector<std::size_t> batch{0};
  const Direction d = svgd_direction(target, e, batch, Bandwidth::median());
  const LogJoint lj = target.log_joint_grad(e.particles[0], batch);
  CHECK(d.phi.row(0).transpose() == lj.grad);
  CHECK(d.log_joint(0) == lj.value);
}

TEST_CASE("plain step moves by lr times phi") {
  Ensemble e = random_ensemble(4, 3, 5);
  const Eigen::MatrixXd before = e.thetas();
  const Eigen::MatrixXd phi = random_ensemble(4, 3, 6).thetas();
  SVGDConfig c;
  c.optimizer = OptimizerKind::Plain;
  c.step_size = 0.125;
  apply_update(e, phi, c);
  CHECK(e.thetas() == before + 0.125 * phi);
  CHECK(e.step == 1);

  c.schedule = [](std::size_t step) { return 1.0 / static_cast<double>(step); };
  const Eigen::MatrixXd mid = e.thetas();
  apply_update(e, phi, c);
  CHECK((e.thetas() - (mid + 0.0625 * phi)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(apply_update(e, Eigen::MatrixXd::Zero(2, 3), c), ShapeError);
}

TEST_CASE("zero direction leaves particles fixed and decays moments") {
  Ensemble e = random_ensemble(3, 2, 7);
  SVGDConfig c;
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(3, 2);
  apply_update(e, phi, c);
  const Eigen::MatrixXd after_one = e.thetas();
  const Eigen::MatrixXd m1 = e.first_moment, v1 = e.second_moment;
  apply_update(e, Eigen::MatrixXd::Zero(3, 2), c);
  CHECK((e.first_moment - c.beta1 * m1).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((e.second_moment - c.beta2 * v1).cwiseAbs().maxCoeff() < 1e-15);

  Ensemble fresh = random_ensemble(3, 2, 8);
  const Eigen::MatrixXd start = fresh.thetas();
  for (int i = 0; i < 5; ++i) apply_update(fresh, Eigen::MatrixXd::Zero(3, 2), c);
  CHECK(fresh.thetas() == start);
  CHECK(after_one.allFinite());
}

TEST_CASE("adaptive-moment iterates match a scalar recursion") {
  const GaussianTarget target = gaussian_1d(2.0, 0.5);
  Ensemble e(std::vector<Particle>{Particle{Eigen::VectorXd::Constant(1, -1.0), {}}});
  SVGDConfig c;
  c.step_size = 0.1;
  const std::vector<std::size_t> batch{0};

  double theta = -1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    const double grad = -(theta - 2.0) / 0.5;  // score; the optimizer minimizes -score
    const double g = -grad;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t));
    const double vh = v / (1 - std::pow(c.beta2, t));
    theta -= c.step_size * mh / (std::sqrt(vh) + c.epsilon);
    svgd_step(e, target, batch, c);
    CHECK(e.particles[0].theta(0) == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("ensemble recovers a one-dimensional Gaussian") {
  const GaussianTarget target = gaussian_1d(3.0, 4.0);
  SVGDConfig c;
  c.step_size = 0.05;
  c.epochs = 3000;
  c.seed = 1;
  const TrainResult r = train(target, random_ensemble(50, 1, 9), c);
  const Eigen::VectorXd x = r.ensemble.thetas().col(0);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (x.size() - 1.0));
  CHECK(std::abs(mean - 3.0) < 0.3);
  CHECK(std::abs(sd - 2.0) < 0.4);

  const TrainResult single = train(target, random_ensemble(1, 1, 10), c);
  CHECK(std::abs(single.ensemble.particles[0].theta(0) - 3.0) < 1e-2);
}

TEST_CASE("ensemble recovers a correlated two-dimensional Gaussian") {
  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.6, 0.6, 0.8;
  const GaussianTarget target(Eigen::Vector2d(-1.0, 2.0), cov);
  SVGDConfig c;
  c.step_size = 0.05;
  c.epochs = 3000;
  const TrainResult r = train(target, random_ensemble(100, 2, 12), c);
  const Eigen::MatrixXd x = r.ensemble.thetas();
  const Eigen::RowVector2d mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const Eigen::MatrixXd emp = centred.transpose() * centred / (x.rows() - 1.0);
  CHECK((mean - Eigen::RowVector2d(-1.0, 2.0)).cwiseAbs().maxCoeff() < 0.1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(emp(i, j) - cov(i, j)) < 0.15 * std::abs(cov(i, j)));
}

TEST_CASE("zero epochs return the initialization") {
  const GaussianTarget target = gaussian_1d(0.0, 1.0);
  const Ensemble init = random_ensemble(4, 1, 13);
  SVGDConfig c;
  c.epochs = 0;
  const TrainResult r = train(target, init, c);
  CHECK(r.trace.empty());
  CHECK(r.ensemble.thetas() == init.thetas());
  CHECK(r.ensemble.step == 0);
}

TEST_CASE("trace mean log joint is nondecreasing after warmup") {
  const GaussianTarget target = gaussian_1d(1.0, 1.0);
  SVGDConfig c;
  c.optimizer = OptimizerKind::Plain;
  c.step_size = 0.05;
  c.epochs = 400;
  const TrainResult r = train(target, random_ensemble(20, 1, 14, 1.0, 6.0), c);
  REQUIRE(r.trace.size() == 400);
  for (std::size_t e = 41; e < r.trace.size(); ++e) {
    CAPTURE(e);
    CHECK(r.trace[e].mean_log_joint >= r.trace[e - 1].mean_log_joint - 1e-12);
  }
}

TEST_CASE("training is reproducible and independent of the worker count") {
  const StaciModel model(toy_model());
  const auto data = toy_data(40, 3);
  SVGDConfig c;
  c.particles = 4;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 77;
  setenv("STACI_NUM_THREADS", "1", 1);
  const TrainResult a = fit_model(model, data, c);
  setenv("STACI_NUM_THREADS", "3", 1);
  const TrainResult b = fit_model(model, data, c);
  unsetenv("STACI_NUM_THREADS");
  CHECK(a.ensemble.thetas() == b.ensemble.thetas());
  REQUIRE(a.trace.size() == 3);
  CHECK(a.ensemble.step == 9);  // 3 epochs x ceil(40 / 16)
  for (std::size_t e = 0; e < 3; ++e) CHECK(a.trace[e].mean_log_joint == b.trace[e].mean_log_joint);

  c.seed = 78;
  CHECK(!(fit_model(model, data, c).ensemble.thetas() == a.ensemble.thetas()));
}

TEST_CASE("non-finite gradients abort with a diagnostic") {
  const ExplodingTarget target;
  Ensemble e = random_ensemble(3, 1, 15);
  e.particles[2].theta(0) = 1e3;
  const std::vector<std::size_t> batch{0};
  try {
    svgd_direction(target, e, batch, Bandwidth::median());
    FAIL("expected a numerical error");
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("particle 2") != std::string::npos);
  }
  SVGDConfig c;
  c.epochs = 2;
  CHECK_THROWS_WITH_AS(train(target, e, c), doctest::Contains("diverged at epoch 0"),
                       NumericalError);
}

TEST_CASE("config validation") {
  SVGDConfig c;
  CHECK_NOTHROW(c.validate());
  c.step_size = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = SVGDConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = SVGDConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = SVGDConfig{};
  c.particles = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  std::vector<Particle> mixed{Particle{Eigen::VectorXd::Zero(2), {}},
                              Particle{Eigen::VectorXd::Zero(3), {}}};
  CHECK_THROWS_AS(Ensemble{mixed}, ShapeError);
}

TEST_CASE("model target wiring") {
  ModelConfig mc = toy_model();
  mc.train_frequencies = false;
  const StaciModel model(mc);
  const auto data = toy_data(12, 4);
  const ModelTarget target(model, data);
  CHECK(target.data_size() == 12);
  const Ensemble e = init_ensemble(model, 3, 5);
  CHECK(e.size() == 3);
  CHECK(!(e.particles[0].theta == e.particles[1].theta));
  CHECK(init_ensemble(model, 3, 5).thetas() == e.thetas());

  const std::vector<std::size_t> idx{1, 4, 7};
  const std::vector<STPoint> gathered{data[1], data[4], data[7]};
  const LogJoint a = target.log_joint_grad(e.particles[0], idx);
  const LogJoint b = model.log_joint_grad(e.particles[0], gathered, 12);
  CHECK(a.value == b.value);
  CHECK(a.grad == b.grad);
  CHECK(target.trainable_mask(model.parameter_count()) == model.trainable_mask());

  const auto names = target.summary_names();
  REQUIRE(names.size() == kHyperCount);
  CHECK(names[kLogTau2] == "tau2");
  const auto s = target.summarize(e.particles[1]);
  CHECK(s[kLogRhoS] == doctest::Approx(model.hypers(e.particles[1]).rho_s));

  const HyperValues mean = posterior_mean_hypers(model, e);
  double sum = 0.0;
  for (const auto& p : e.particles) sum += model.hypers(p).sigma2;
  CHECK(mean.sigma2 == doctest::Approx(sum / 3.0));
}

TEST_CASE("frozen blocks do not move during training") {
  ModelConfig mc = toy_model();
  mc.train_frequencies = false;
  mc.train_hypers = false;
  const StaciModel model(mc);
  const auto data = toy_data(20, 6);
  SVGDConfig c;
  c.particles = 3;
  c.epochs = 2;
  c.batch_size = 10;
  c.step_size = 0.01;
  const Ensemble init = init_ensemble(model, 3, c.seed);
  const TrainResult r = fit_model(model, data, c);
  const auto& lay = model.layout();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.ensemble.particles[i].theta.segment(lay.freq.offset, lay.freq.size) ==
          init.particles[i].theta.segment(lay.freq.offset, lay.freq.size));
    CHECK(r.ensemble.particles[i].theta.segment(lay.hyper.offset, lay.hyper.size) ==
          init.particles[i].theta.segment(lay.hyper.offset, lay.hyper.size));
    CHECK(!(r.ensemble.particles[i].theta.segment(lay.amp_a.offset, lay.features) ==
            init.particles[i].theta.segment(lay.amp_a.offset, lay.features)));
  }
  std::ostringstream os;
  write_trace_csv(os, r);
  CHECK(os.str().rfind("epoch,mean_log_joint,alpha,nu,rho_s,rho_t,rho_l,sigma2,tau2\n", 0) == 0);
}

}  // TEST_SUITE
