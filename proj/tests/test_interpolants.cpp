#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "d3re/interpolant.hpp"

using namespace d3re;

namespace {

InterpolantConfig ddbi_default() {
  return InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
}

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("linear schedule values and derivatives") {
  const Schedule s = Schedule::linear();
  const ScheduleEval e = schedule_eval(s, 0.25);
  REQUIRE(e.alpha == 0.75);
  REQUIRE(e.beta == 0.25);
  REQUIRE(e.dalpha == -1.0);
  REQUIRE(e.dbeta == 1.0);
  for (double t : {0.0, 1.0}) {
    const ScheduleEval b = schedule_eval(s, t);
    REQUIRE(b.alpha + b.beta == 1.0);
  }
}

TEST_CASE("schedule boundary conditions") {
  const Schedule lin = Schedule::linear();
  const Schedule tre = Schedule::tre({0.0, 0.3, 0.55, 0.8, 1.0});
  for (const Schedule& s : {lin, tre}) {
    REQUIRE(std::abs(schedule_eval(s, 0.0).alpha - 1.0) < 1e-12);
    REQUIRE(std::abs(schedule_eval(s, 0.0).beta) < 1e-12);
    REQUIRE(std::abs(schedule_eval(s, 1.0).alpha) < 1e-12);
    REQUIRE(std::abs(schedule_eval(s, 1.0).beta - 1.0) < 1e-12);
  }
  // VP reaches the data side only asymptotically: alpha(1) is small but not
  // zero, and beta compensates through beta = sqrt(1 - alpha^2).
  const Schedule vp = Schedule::vp(0.1, 20.0);
  REQUIRE(schedule_eval(vp, 0.0).alpha == 1.0);
  REQUIRE(schedule_eval(vp, 0.0).beta == 0.0);
  REQUIRE(schedule_eval(vp, 1.0).alpha == Catch::Approx(std::exp(-5.025)).epsilon(1e-12));
  REQUIRE(schedule_eval(vp, 1.0).alpha < 0.01);
}

TEST_CASE("schedules are monotone and satisfy their algebraic identities") {
  const Schedule lin = Schedule::linear();
  const Schedule vp = Schedule::vp(0.1, 20.0);
  const Schedule tre = Schedule::tre({0.0, 0.2, 0.5, 1.0});
  double pa_lin = 2, pb_lin = -1, pa_vp = 2, pb_vp = -1, pa_tre = 2, pb_tre = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double t = static_cast<double>(i) / 1000.0;
    const ScheduleEval el = schedule_eval(lin, t);
    REQUIRE(std::abs(el.alpha + el.beta - 1.0) < 1e-12);
    REQUIRE(el.alpha < pa_lin);
    REQUIRE(el.beta > pb_lin);
    pa_lin = el.alpha;
    pb_lin = el.beta;

    const ScheduleEval ev = schedule_eval(vp, t);
    REQUIRE(std::abs(ev.alpha * ev.alpha + ev.beta * ev.beta - 1.0) < 1e-9);
    REQUIRE(ev.alpha < pa_vp);
    REQUIRE(ev.beta > pb_vp);
    pa_vp = ev.alpha;
    pb_vp = ev.beta;

    const ScheduleEval et = schedule_eval(tre, t);
    REQUIRE(std::abs(et.alpha * et.alpha + et.beta * et.beta - 1.0) < 1e-9);
    REQUIRE(et.alpha < pa_tre);
    REQUIRE(et.beta > pb_tre);
    pa_tre = et.alpha;
    pb_tre = et.beta;
  }
}

TEST_CASE("schedule derivatives match finite differences") {
  const double h = 1e-6;
  const Schedule lin = Schedule::linear();
  const Schedule vp = Schedule::vp(0.1, 20.0);
  const Schedule tre = Schedule::tre({0.0, 0.25, 0.5, 0.75, 1.0});
  // Interior points offset from the TRE knots; VP's sqrt makes t=0 singular.
  for (int i = 1; i < 16; ++i) {
    const double t = 0.03 + 0.94 * static_cast<double>(i) / 16.0 + 0.011;
    for (const Schedule& s : {lin, vp, tre}) {
      const ScheduleEval e = schedule_eval(s, t);
      const ScheduleEval ep = schedule_eval(s, t + h);
      const ScheduleEval em = schedule_eval(s, t - h);
      REQUIRE(close_rel(e.dalpha, (ep.alpha - em.alpha) / (2 * h), 1e-6));
      REQUIRE(close_rel(e.dbeta, (ep.beta - em.beta) / (2 * h), 1e-6));
    }
  }
}

TEST_CASE("schedule construction is validated") {
  REQUIRE_THROWS_AS(Schedule::vp(0.0, 20.0), ConfigError);
  REQUIRE_THROWS_AS(Schedule::vp(1.0, 0.5), ConfigError);
  REQUIRE_THROWS_AS(Schedule::tre({0.0, 0.5}), ConfigError);          // must end at 1
  REQUIRE_THROWS_AS(Schedule::tre({0.0, 0.6, 0.5, 1.0}), ConfigError);  // not increasing
  REQUIRE_THROWS_AS(schedule_eval(Schedule::linear(), -0.1), ConfigError);
  REQUIRE_THROWS_AS(schedule_eval(Schedule::linear(), 1.1), ConfigError);
}

TEST_CASE("interpolant config rules") {
  const Schedule lin = Schedule::linear();
  const auto di = InterpolantConfig::make(Method::DI, lin, 0.5, 1e-5);
  REQUIRE(di.gamma2 == 0.0);  // DI carries no noise
  REQUIRE(di.epsilon == 0.0);
  REQUIRE_THROWS_AS(InterpolantConfig::make(Method::DBI, lin, 0.5, 1e-5), ConfigError);
  REQUIRE_THROWS_AS(InterpolantConfig::make(Method::DSBI, Schedule::vp(0.1, 20.0), 0.5, 1e-5),
                    ConfigError);
  REQUIRE_THROWS_AS(InterpolantConfig::make(Method::DSBI, lin, 0.0, 1e-5), ConfigError);
  REQUIRE_THROWS_AS(InterpolantConfig::make(Method::DDBI, lin, -0.1, 1e-5), ConfigError);
  REQUIRE_THROWS_AS(InterpolantConfig::make(Method::DDBI, lin, 0.5, -1e-7), ConfigError);
}

TEST_CASE("kernel variance: frozen midpoint value and finite-difference check") {
  const auto c = ddbi_default();
  const Sigma2 mid = sigma2(c, 0.5);
  REQUIRE(mid.value == Catch::Approx(0.125005).epsilon(1e-12));
  REQUIRE(mid.deriv == Catch::Approx(0.0).margin(1e-15));

  const auto dbi = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
  REQUIRE(sigma2(dbi, 0.25).value == Catch::Approx(0.25 * 0.75 * 0.5).epsilon(1e-14));
  const auto di = InterpolantConfig::make(Method::DI, Schedule::linear(), 0.0, 0.0);
  REQUIRE(sigma2(di, 0.7).value == 0.0);

  const double h = 1e-6;
  for (double t : {0.1, 0.3, 0.6, 0.9}) {
    const double fd = (sigma2(c, t + h).value - sigma2(c, t - h).value) / (2 * h);
    REQUIRE(close_rel(sigma2(c, t).deriv, fd, 1e-6));
  }
}

TEST_CASE("path points reconstruct exactly from stored fields") {
  const auto c = ddbi_default();
  auto g = make_engine(3, Stream::Bridge);
  auto ge = make_engine(3, Stream::Eval);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::VectorXd x0 = normal_vector(ge, 3);
    const Eigen::VectorXd x1 = normal_vector(ge, 3);
    const double t = uniform01(ge);
    const PathPoint p = sample_path(c, x0, x1, t, g);
    const ScheduleEval se = schedule_eval(c.schedule, t);
    const Eigen::VectorXd rebuilt =
        se.alpha * p.x0 + se.beta * p.x1 + std::sqrt(sigma2(c, t).value) * p.z;
    REQUIRE((p.xt - rebuilt).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("smoothed bridge at t=0 is the endpoint plus sqrt(eps) noise") {
  const auto c = InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 0.01);
  auto g = make_engine(5, Stream::Bridge);
  const Eigen::VectorXd x0 = Eigen::Vector2d(1.0, -2.0);
  const Eigen::VectorXd x1 = Eigen::Vector2d(5.0, 5.0);
  const PathPoint p = sample_path(c, x0, x1, 0.0, g);
  REQUIRE(((p.xt - x0) / 0.1 - p.z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conditional time score: frozen value at the no-displacement point") {
  const auto c = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
  PathPoint p;
  p.x0 = Eigen::VectorXd::Zero(1);
  p.x1 = Eigen::VectorXd::Zero(1);
  p.z = Eigen::VectorXd::Zero(1);
  p.xt = Eigen::VectorXd::Zero(1);
  p.t = 0.25;
  // sigma2 = 0.09375, dsigma2 = 0.25, so the score is -0.25/(2*0.09375).
  REQUIRE(conditional_time_score(c, p) == Catch::Approx(-4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("conditional time score matches finite differences of the kernel log-pdf") {
  const auto c = ddbi_default();
  auto g = make_engine(31, Stream::Eval);
  int checked = 0;
  for (int rep = 0; rep < 400; ++rep) {
    const Eigen::VectorXd x0 = 2.0 * normal_vector(g, 2);
    const Eigen::VectorXd x1 = 2.0 * normal_vector(g, 2);
    double t = uniform01(g);
    if (t < 1e-3 || t > 1.0 - 1e-3) continue;
    auto gb = make_engine(static_cast<std::uint64_t>(rep), Stream::Bridge);
    const PathPoint p = sample_path(c, x0, x1, t, gb);
    // Fourth-order stencil with the step tied to the boundary distance;
    // sigma^2 varies fastest near the ends and wrecks second-order accuracy.
    const double h = std::min(1e-4, std::min(t, 1.0 - t) / 64.0);
    auto f = [&](double tt) { return conditional_logpdf(c, x0, x1, tt, p.xt); };
    const double fd =
        (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12.0 * h);
    REQUIRE(close_rel(conditional_time_score(c, p), fd, 1e-5));
    checked++;
  }
  REQUIRE(checked > 300);
}

TEST_CASE("deterministic interpolant has no conditional kernel") {
  const auto di = InterpolantConfig::make(Method::DI, Schedule::linear(), 0.0, 0.0);
  PathPoint p;
  p.x0 = p.x1 = p.z = p.xt = Eigen::VectorXd::Zero(1);
  p.t = 0.5;
  REQUIRE_THROWS_AS(conditional_time_score(di, p), ConfigError);
  REQUIRE_THROWS_AS(conditional_logpdf(di, p.x0, p.x1, 0.5, p.xt), ConfigError);
}

TEST_CASE("gaussian marginal: frozen unit-shift values at the midpoint") {
  const auto q0 = GaussianSpec::isotropic(Eigen::VectorXd::Zero(1), 1.0);
  const auto q1 = GaussianSpec::isotropic(Eigen::VectorXd::Ones(1), 1.0);

  const auto mid_ddbi = gaussian_marginal(ddbi_default(), q0, q1, 0.5);
  REQUIRE(mid_ddbi.mean[0] == Catch::Approx(0.5).epsilon(1e-14));
  REQUIRE(mid_ddbi.var == Catch::Approx(0.625005).epsilon(1e-12));

  const auto di = InterpolantConfig::make(Method::DI, Schedule::linear(), 0.0, 0.0);
  const auto mid_di = gaussian_marginal(di, q0, q1, 0.5);
  REQUIRE(mid_di.var == Catch::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("bridge marginal variance exceeds deterministic by exactly t(1-t)gamma2") {
  const auto q0 = GaussianSpec::diagonal(Eigen::Vector2d(0.0, 1.0), Eigen::Vector2d(1.0, 0.3));
  const auto q1 = GaussianSpec::diagonal(Eigen::Vector2d(2.0, -1.0), Eigen::Vector2d(0.7, 2.0));
  const auto di = InterpolantConfig::make(Method::DI, Schedule::linear(), 0.0, 0.0);
  const auto dbi = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
  for (int i = 0; i <= 10; ++i) {
    const double t = static_cast<double>(i) / 10.0;
    const Eigen::VectorXd vdi = gaussian_marginal(di, q0, q1, t).cov_diagonal();
    const Eigen::VectorXd vdbi = gaussian_marginal(dbi, q0, q1, t).cov_diagonal();
    const double expected = t * (1.0 - t) * 0.5;
    REQUIRE((vdbi - vdi).cwiseAbs().minCoeff() == Catch::Approx(expected).margin(1e-12));
    REQUIRE((vdbi - vdi).cwiseAbs().maxCoeff() == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("marginal time score matches finite differences of the marginal log-pdf") {
  const auto q0 = GaussianSpec::isotropic(Eigen::VectorXd::Zero(4), 1.0);
  const auto q1 = GaussianSpec::paired(4, 0.7);
  const auto c = ddbi_default();
  auto g = make_engine(17, Stream::Eval);
  for (int rep = 0; rep < 100; ++rep) {
    double t = 0.02 + 0.96 * uniform01(g);
    const Eigen::VectorXd x = 2.0 * normal_vector(g, 4);
    const double h = 1e-5;
    const double fd = (gaussian_logpdf(gaussian_marginal(c, q0, q1, t + h), x) -
                       gaussian_logpdf(gaussian_marginal(c, q0, q1, t - h), x)) /
                      (2.0 * h);
    REQUIRE(close_rel(gaussian_marginal_time_score(c, q0, q1, t, x), fd, 1e-5));
  }
}

TEST_CASE("time integral of the marginal score telescopes to the log ratio") {
  // Dense trapezoid on the analytic score; the quadrature module gets its
  // own tests, this pins the identity itself.
  const auto q0 = GaussianSpec::isotropic(Eigen::VectorXd::Zero(1), 1.0);
  const auto q1 = GaussianSpec::isotropic(Eigen::VectorXd::Ones(1), 1.0);
  const auto c = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
  const int n = 4000;
  for (double xval : {-2.0, 0.0, 0.5, 3.0}) {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, xval);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t0 = static_cast<double>(i) / n;
      const double t1 = static_cast<double>(i + 1) / n;
      acc += 0.5 * (gaussian_marginal_time_score(c, q0, q1, t0, x) +
                    gaussian_marginal_time_score(c, q0, q1, t1, x)) *
             (t1 - t0);
    }
    const double expected = gaussian_logpdf(q1, x) - gaussian_logpdf(q0, x);
    REQUIRE(acc == Catch::Approx(expected).margin(5e-6));
    REQUIRE(expected == Catch::Approx(xval - 0.5).epsilon(1e-12));
  }
}

TEST_CASE("sampled paths match the analytic marginal law") {
  const auto q0 = GaussianSpec::isotropic(Eigen::Vector2d(0.0, 0.0), 1.0);
  const auto q1 = GaussianSpec::diagonal(Eigen::Vector2d(1.0, -1.0), Eigen::Vector2d(0.5, 2.0));
  const auto c = ddbi_default();
  const double t = 0.35;
  auto gs = make_engine(8, Stream::Source0);
  auto gb = make_engine(8, Stream::Bridge);
  const int n = 40000;
  const Eigen::MatrixXd xs0 = gaussian_sample(q0, n, gs);
  const Eigen::MatrixXd xs1 = gaussian_sample(q1, n, gs);
  Eigen::MatrixXd xt(n, 2);
  for (int i = 0; i < n; ++i)
    xt.row(i) = sample_path(c, xs0.row(i).transpose(), xs1.row(i).transpose(), t, gb)
                    .xt.transpose();
  const auto marg = gaussian_marginal(c, q0, q1, t);
  REQUIRE((xt.colwise().mean().transpose() - marg.mean).cwiseAbs().maxCoeff() < 0.02);
  Eigen::MatrixXd centered = xt.rowwise() - xt.colwise().mean();
  const Eigen::VectorXd v = centered.colwise().squaredNorm().transpose() / n;
  REQUIRE((v - marg.cov_diagonal()).cwiseAbs().maxCoeff() < 0.03);
}
