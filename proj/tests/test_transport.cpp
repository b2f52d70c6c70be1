#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "d3re/gaussian.hpp"
#include "d3re/transport.hpp"

using namespace d3re;

namespace {

// Projects a positive matrix onto the couplings with marginals a, b by
// alternating row/column rescaling. Used to manufacture feasible but
// suboptimal competitors for the optimality tests.
Eigen::MatrixXd ipf_project(Eigen::MatrixXd m, const Eigen::VectorXd& a,
                            const Eigen::VectorXd& b, int rounds = 400) {
  for (int r = 0; r < rounds; ++r) {
    const Eigen::VectorXd row_scale = a.cwiseQuotient(m.rowwise().sum());
    m = row_scale.asDiagonal() * m;
    const Eigen::VectorXd col_scale = b.cwiseQuotient(m.colwise().sum().transpose());
    m = m * col_scale.asDiagonal();
  }
  return m;
}

}  // namespace

TEST_CASE("cost matrix holds exact pairwise squared distances") {
  auto g = make_engine(1, Stream::Eval);
  const Eigen::MatrixXd x = normal_matrix(g, 7, 3);
  REQUIRE(cost_matrix(x, x).diagonal().cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd p0(2, 1), p1(2, 1);
  p0 << 0.0, 1.0;
  p1 << 0.0, 1.0;
  const Eigen::MatrixXd c01 = cost_matrix(p0, p1);
  REQUIRE(c01(0, 0) == 0.0);
  REQUIRE(c01(0, 1) == 1.0);
  REQUIRE(c01(1, 0) == 1.0);
  REQUIRE(c01(1, 1) == 0.0);

  const Eigen::MatrixXd b0 = 2.0 * normal_matrix(g, 9, 4);
  const Eigen::MatrixXd b1 = 2.0 * normal_matrix(g, 6, 4);
  const Eigen::MatrixXd c = cost_matrix(b0, b1);
  REQUIRE((c.array() >= 0.0).all());
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 6; ++j)
      REQUIRE(c(i, j) == Catch::Approx((b0.row(i) - b1.row(j)).squaredNorm()).margin(1e-12));

  Eigen::MatrixXd bad(3, 2);
  REQUIRE_THROWS_AS(cost_matrix(b0, bad), ConfigError);
}

TEST_CASE("sinkhorn at extreme regularization strengths") {
  Eigen::MatrixXd c(2, 2);
  c << 0.0, 1.0, 1.0, 0.0;
  const Eigen::VectorXd m = uniform_marginal(2);

  // Entropy dominates: the coupling flattens to uniform.
  const SinkhornResult hot = sinkhorn(c, m, m, 1e3);
  REQUIRE(hot.converged);
  REQUIRE((hot.coupling.array() - 0.25).abs().maxCoeff() < 1e-3);

  // Cost dominates: mass concentrates on the zero-cost diagonal.
  const SinkhornResult cold = sinkhorn(c, m, m, 0.01);
  REQUIRE(cold.converged);
  REQUIRE(cold.coupling(0, 1) < 1e-3);
  REQUIRE(cold.coupling(1, 0) < 1e-3);
  REQUIRE(cold.coupling(0, 0) == Catch::Approx(0.5).margin(1e-3));

  // The 2x2 feasible set with uniform marginals is one-dimensional; scan it.
  double best_p = -1.0, best_obj = 1e300;
  for (int i = 1; i < 500000; ++i) {
    const double p = 0.5 * static_cast<double>(i) / 500000.0;
    Eigen::MatrixXd cand(2, 2);
    cand << p, 0.5 - p, 0.5 - p, p;
    const double obj = entropic_objective(cand, c, 0.01);
    if (obj < best_obj) {
      best_obj = obj;
      best_p = p;
    }
  }
  REQUIRE(cold.coupling(0, 0) == Catch::Approx(best_p).margin(2e-6));
  REQUIRE(entropic_objective(cold.coupling, c, 0.01) <= best_obj + 1e-9);
}

TEST_CASE("sinkhorn marginals meet the tolerance on large random batches") {
  auto g = make_engine(7, Stream::Eval);
  const Eigen::MatrixXd b0 = normal_matrix(g, 64, 2);
  const Eigen::MatrixXd b1 = (normal_matrix(g, 64, 2).array() + 1.5).matrix();
  const Eigen::MatrixXd c = cost_matrix(b0, b1);
  const Eigen::VectorXd m = uniform_marginal(64);
  for (double reg : {0.05, 0.5, 2.0}) {
    // Small reg needs a real budget: the scaling contraction slows as reg
    // drops below the cost scale.
    const SinkhornResult r = sinkhorn(c, m, m, reg, 20000);
    REQUIRE(r.converged);
    REQUIRE((r.coupling.array() >= 0.0).all());
    REQUIRE((r.coupling.rowwise().sum() - m).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((r.coupling.colwise().sum().transpose() - m).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE(r.coupling.sum() == Catch::Approx(1.0).margin(1e-6));
  }

  // Non-uniform marginals.
  Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(64, 1.0, 4.0);
  a /= a.sum();
  Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(64, 2.0, 1.0);
  b /= b.sum();
  const SinkhornResult r = sinkhorn(c, a, b, 0.3);
  REQUIRE(r.converged);
  REQUIRE((r.coupling.rowwise().sum() - a).lpNorm<1>() < 1e-6);
  REQUIRE((r.coupling.colwise().sum().transpose() - b).lpNorm<1>() < 1e-6);
}

TEST_CASE("sinkhorn survives regularization far below the cost scale") {
  // exp(-C/reg) underflows at cold start here; the stabilized path must
  // still recover marginals to tolerance.
  auto g = make_engine(11, Stream::Eval);
  const Eigen::MatrixXd b0 = 3.0 * normal_matrix(g, 16, 2);
  const Eigen::MatrixXd b1 = 3.0 * normal_matrix(g, 16, 2);
  const Eigen::MatrixXd c = cost_matrix(b0, b1);
  REQUIRE(c.maxCoeff() > 10.0);
  const Eigen::VectorXd m = uniform_marginal(16);
  const SinkhornResult r = sinkhorn(c, m, m, 1e-3, 20000);
  REQUIRE(r.converged);
  REQUIRE(r.marginal_error < 1e-6);
  // Near-zero regularization forces a near-permutation coupling.
  REQUIRE(r.coupling.rowwise().maxCoeff().minCoeff() > 0.9 / 16.0);
}

TEST_CASE("sinkhorn input validation and non-convergence reporting") {
  Eigen::MatrixXd c(2, 2);
  c << 0.0, 1.0, 1.0, 0.0;
  const Eigen::VectorXd m = uniform_marginal(2);
  REQUIRE_THROWS_AS(sinkhorn(c, m, m, 0.0), ConfigError);
  REQUIRE_THROWS_AS(sinkhorn(c, m, m, -1.0), ConfigError);
  REQUIRE_THROWS_AS(sinkhorn(c, uniform_marginal(3), m, 1.0), ConfigError);
  REQUIRE_THROWS_AS(sinkhorn(c, Eigen::Vector2d(1.0, 0.0), m, 1.0), ConfigError);
  REQUIRE_THROWS_AS(sinkhorn(c, Eigen::Vector2d(0.7, 0.7), m, 1.0), ConfigError);

  auto g = make_engine(3, Stream::Eval);
  const Eigen::MatrixXd big = cost_matrix(normal_matrix(g, 48, 2), normal_matrix(g, 48, 2));
  const SinkhornResult r = sinkhorn(big, uniform_marginal(48), uniform_marginal(48), 0.01, 2);
  REQUIRE_FALSE(r.converged);
  REQUIRE(r.iterations == 2);
  REQUIRE(r.marginal_error > 1e-8);
}

TEST_CASE("entropic objective closed forms") {
  const Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 2, 0.25);
  REQUIRE(entropic_objective(p, Eigen::MatrixXd::Zero(2, 2), 1.0) ==
          Catch::Approx(-std::log(4.0)).epsilon(1e-14));

  Eigen::MatrixXd c(2, 2);
  c << 0.0, 1.0, 1.0, 0.0;
  Eigen::MatrixXd diag(2, 2);
  diag << 0.5, 0.0, 0.0, 0.5;
  REQUIRE(entropic_objective(diag, c, 0.0) == 0.0);  // 0 log 0 handled
  REQUIRE(coupling_entropy(diag) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("sinkhorn beats the independent coupling on random batches") {
  auto g = make_engine(23, Stream::Eval);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 8 + static_cast<int>(uniform01(g) * 24);
    const Eigen::MatrixXd b0 = 2.0 * normal_matrix(g, n, 2);
    const Eigen::MatrixXd b1 = (2.0 * normal_matrix(g, n, 2)).rowwise() +
                               Eigen::RowVector2d(1.0, -0.5);
    const Eigen::MatrixXd c = cost_matrix(b0, b1);
    const Eigen::VectorXd m = uniform_marginal(n);
    const double reg = 0.1 + 2.0 * uniform01(g);
    const SinkhornResult r = sinkhorn(c, m, m, reg);
    const Eigen::MatrixXd indep = m * m.transpose();
    REQUIRE(entropic_objective(r.coupling, c, reg) <=
            entropic_objective(indep, c, reg) + 1e-9);
  }
}

TEST_CASE("sinkhorn optimality against projected random couplings") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto g = make_engine(seed, Stream::Eval);
    const Eigen::MatrixXd b0 = normal_matrix(g, 3, 2);
    const Eigen::MatrixXd b1 = normal_matrix(g, 3, 2);
    const Eigen::MatrixXd c = cost_matrix(b0, b1);
    const Eigen::VectorXd m = uniform_marginal(3);
    const double reg = 0.25;
    const SinkhornResult r = sinkhorn(c, m, m, reg, 5000, 1e-12);
    const double opt = entropic_objective(r.coupling, c, reg);
    for (int k = 0; k < 200; ++k) {
      const Eigen::MatrixXd raw = normal_matrix(g, 3, 3).array().exp();
      const Eigen::MatrixXd cand = ipf_project(raw, m, m);
      REQUIRE(opt <= entropic_objective(cand, c, reg) + 1e-9);
    }
  }
}

TEST_CASE("coupling entropy grows with regularization") {
  auto g = make_engine(5, Stream::Eval);
  const Eigen::MatrixXd c = cost_matrix(normal_matrix(g, 16, 2), normal_matrix(g, 16, 2));
  const Eigen::VectorXd m = uniform_marginal(16);
  double prev = -1e300;
  for (double reg : {0.05, 0.15, 0.5, 1.5, 5.0}) {
    // Solver tol 1e-7: at reg far below the cost scale the marginal error
    // bottoms out near 4e-8 from roundoff in exp((f+g-C)/reg).
    const SinkhornResult r = sinkhorn(c, m, m, reg, 60000, 1e-7);
    REQUIRE(r.converged);
    const double h = coupling_entropy(r.coupling);
    REQUIRE(h >= prev - 1e-9);
    prev = h;
  }
  REQUIRE(prev <= std::log(256.0) + 1e-12);  // capped by the uniform coupling
}

TEST_CASE("rearranged pairs lower the transport objective on every batch") {
  // Premise behind the variance claim for coupling-based rearrangement: the
  // optimal entropic coupling never scores worse than independent pairing.
  auto g = make_engine(29, Stream::Eval);
  const auto q0 = GaussianSpec::isotropic(Eigen::Vector2d(0.0, 0.0), 1.0);
  const auto q1 = GaussianSpec::isotropic(Eigen::Vector2d(2.0, 1.0), 0.5);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd b0 = gaussian_sample(q0, 32, g);
    const Eigen::MatrixXd b1 = gaussian_sample(q1, 32, g);
    const Eigen::MatrixXd c = cost_matrix(b0, b1);
    const Eigen::VectorXd m = uniform_marginal(32);
    for (double gamma2 : {0.1, 0.5, 2.0}) {
      const double reg = 2.0 * gamma2;
      const SinkhornResult r = sinkhorn(c, m, m, reg);
      const Eigen::MatrixXd indep = m * m.transpose();
      REQUIRE(entropic_objective(r.coupling, c, reg) <=
              entropic_objective(indep, c, reg) + 1e-9);
    }
  }
}

TEST_CASE("coupling sampler hits only supported pairs and preserves marginals") {
  auto g = make_engine(41, Stream::Coupling);
  Eigen::MatrixXd diag(2, 2);
  diag << 0.5, 0.0, 0.0, 0.5;
  for (const auto& [i, j] : sample_coupling_indices(diag, 200, g))
    REQUIRE(i == j);

  const Eigen::MatrixXd unif = Eigen::MatrixXd::Constant(2, 2, 0.25);
  const int n = 10000;
  Eigen::Matrix2d counts = Eigen::Matrix2d::Zero();
  for (const auto& [i, j] : sample_coupling_indices(unif, n, g)) counts(i, j) += 1.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  REQUIRE((counts.array() - n * 0.25).abs().maxCoeff() < 3.0 * sigma);

  // Non-uniform row marginal: empirical row histogram within 3 sigma.
  Eigen::VectorXd a(4);
  a << 0.1, 0.2, 0.3, 0.4;
  const Eigen::MatrixXd p = a * uniform_marginal(4).transpose();
  Eigen::Vector4d rows = Eigen::Vector4d::Zero();
  for (const auto& [i, j] : sample_coupling_indices(p, n, g)) rows[i] += 1.0;
  for (int i = 0; i < 4; ++i) {
    const double s = std::sqrt(n * a[i] * (1.0 - a[i]));
    REQUIRE(std::abs(rows[i] - n * a[i]) < 3.0 * s);
  }
}

TEST_CASE("coupling sampler rebuilds batches by indexed rows") {
  auto g = make_engine(43, Stream::Coupling);
  Eigen::MatrixXd b0(2, 2), b1(2, 2);
  b0 << 1.0, 2.0, 3.0, 4.0;
  b1 << -1.0, -2.0, -3.0, -4.0;
  Eigen::MatrixXd diag(2, 2);
  diag << 0.5, 0.0, 0.0, 0.5;
  const auto [x0, x1] = sample_coupling(diag, b0, b1, 64, g);
  REQUIRE(x0.rows() == 64);
  for (int s = 0; s < 64; ++s) {
    // Pairing is diagonal, so each drawn pair is (row k of b0, row k of b1).
    const int k = x0(s, 0) == 1.0 ? 0 : 1;
    REQUIRE(x0.row(s) == b0.row(k));
    REQUIRE(x1.row(s) == b1.row(k));
  }
  REQUIRE_THROWS_AS(sample_coupling(diag, b0, Eigen::MatrixXd::Zero(3, 2), 4, g), ConfigError);
  REQUIRE_THROWS_AS(sample_coupling_indices(Eigen::MatrixXd::Zero(2, 2), 4, g), ConfigError);
}
