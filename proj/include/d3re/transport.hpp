#pragma once

// Entropic optimal transport on mini-batches: squared-distance costs, a
// log-stabilized Sinkhorn solver, coupling-based pair resampling, and the
// regularized transport objective.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "d3re/errors.hpp"
#include "d3re/rng.hpp"

namespace d3re {

// C[i][j] = squared Euclidean distance between row i of b0 and row j of b1.
inline Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& b0, const Eigen::MatrixXd& b1) {
  if (b0.cols() != b1.cols()) throw ConfigError("cost_matrix: point dimensions differ");
  const Eigen::VectorXd s0 = b0.rowwise().squaredNorm();
  const Eigen::VectorXd s1 = b1.rowwise().squaredNorm();
  Eigen::MatrixXd c = -2.0 * b0 * b1.transpose();
  c.colwise() += s0;
  c.rowwise() += s1.transpose();
  return c.cwiseMax(0.0);  // clamp cancellation residue
}

inline Eigen::VectorXd uniform_marginal(Eigen::Index n) {
  if (n <= 0) throw ConfigError("uniform_marginal: need at least one point");
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

struct SinkhornResult {
  Eigen::MatrixXd coupling;
  Eigen::VectorXd f, g;  // dual potentials, cost units
  int iterations = 0;
  bool converged = false;
  double marginal_error = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Eigen::VectorXd lse_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out[i] = std::isfinite(mx) ? mx + std::log((m.row(i).array() - mx).exp().sum()) : mx;
  }
  return out;
}

}  // namespace detail

// Minimizes sum(P*C) - reg*H(P) over couplings with marginals a, b. The hot
// path runs plain matrix-vector scaling in the exp domain; scaling vectors
// are absorbed into the potentials before they can overflow, and a
// log-sum-exp round rescues starts where exp((f+g-C)/reg) underflows
// outright. When reg sits far below the cost scale the plain iteration
// contracts too slowly, so the solve is annealed: a geometric ladder of
// larger regularizations warm-starts the potentials before the target reg
// gets the remaining iteration budget.
inline SinkhornResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                               const Eigen::VectorXd& b, double reg, int max_iter = 1000,
                               double tol = 1e-8) {
  const Eigen::Index n0 = cost.rows(), n1 = cost.cols();
  if (reg <= 0.0 || !std::isfinite(reg)) throw ConfigError("sinkhorn: reg must be positive");
  if (max_iter < 1) throw ConfigError("sinkhorn: max_iter must be at least 1");
  if (a.size() != n0 || b.size() != n1)
    throw ConfigError("sinkhorn: marginal sizes do not match the cost matrix");
  if (!(a.array() > 0.0).all() || !(b.array() > 0.0).all())
    throw ConfigError("sinkhorn: marginals must be strictly positive");
  if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9)
    throw ConfigError("sinkhorn: marginals must sum to 1");

  Eigen::VectorXd f = Eigen::VectorXd::Zero(n0), g = Eigen::VectorXd::Zero(n1);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(n0), v = Eigen::VectorXd::Ones(n1);
  const Eigen::VectorXd log_a = a.array().log(), log_b = b.array().log();
  const double absorb_at = 1e50;
  int used = 0;

  auto kernel = [&](double r) -> Eigen::MatrixXd {
    Eigen::MatrixXd s = -cost;
    s.colwise() += f;
    s.rowwise() += g.transpose();
    return (s / r).array().exp();
  };
  auto absorb = [&](double r) {
    f += r * u.array().log().matrix();
    g += r * v.array().log().matrix();
    u.setOnes();
    v.setOnes();
  };
  auto lse_round = [&](double r) {
    Eigen::MatrixXd s = -cost;
    s.rowwise() += g.transpose();
    f = r * (log_a - detail::lse_rows(Eigen::MatrixXd(s / r)));
    s.colwise() += f;
    g += r * (log_b - detail::lse_rows(Eigen::MatrixXd(s.transpose() / r)));
    u.setOnes();
    v.setOnes();
  };
  // Runs up to iters scaling updates at regularization r; leaves u = v = 1
  // with everything absorbed into f, g. Returns whether tl was reached.
  auto run = [&](double r, int iters, double tl) -> bool {
    u.setOnes();
    v.setOnes();
    Eigen::MatrixXd k = kernel(r);
    for (int s = 0; s < iters; ++s) {
      ++used;
      const Eigen::VectorXd kv = k * v;
      const double row_err = (u.cwiseProduct(kv) - a).lpNorm<1>();
      if (row_err < tl) {
        absorb(r);
        return true;
      }
      if (!kv.allFinite() || (kv.array() <= 0.0).any()) {
        lse_round(r);
        k = kernel(r);
        continue;
      }
      u = a.cwiseQuotient(kv);
      const Eigen::VectorXd ktu = k.transpose() * u;
      if (!ktu.allFinite() || (ktu.array() <= 0.0).any()) {
        lse_round(r);
        k = kernel(r);
        continue;
      }
      v = b.cwiseQuotient(ktu);
      if (u.cwiseAbs().maxCoeff() > absorb_at || v.cwiseAbs().maxCoeff() > absorb_at) {
        absorb(r);
        k = kernel(r);
      }
    }
    absorb(r);
    return false;
  };

  const double cmax = cost.maxCoeff();
  if (cmax > 0.0 && reg < 0.25 * cmax) {
    std::vector<double> ladder;
    for (double r = 0.25 * cmax; r > 1.5 * reg; r *= 0.5) ladder.push_back(r);
    if (!ladder.empty()) {
      const int per = std::min(60, (max_iter / 2) / static_cast<int>(ladder.size()));
      if (per > 0)
        for (double r : ladder) run(r, per, std::max(tol, 1e-4));
    }
  }
  const bool converged = run(reg, max_iter - used, tol);

  SinkhornResult res;
  res.coupling = kernel(reg);
  res.f = f;
  res.g = g;
  res.iterations = used;
  res.converged = converged;
  res.marginal_error = (res.coupling.rowwise().sum() - a).lpNorm<1>() +
                       (res.coupling.colwise().sum().transpose() - b).lpNorm<1>();
  if (!res.coupling.allFinite()) throw NumericError("sinkhorn: coupling is not finite");
  return res;
}

// H(P) = -sum P log P with 0*log(0) = 0.
inline double coupling_entropy(const Eigen::MatrixXd& p) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double x = p(i, j);
      if (x < 0.0) throw ConfigError("coupling_entropy: negative coupling entry");
      if (x > 0.0) h -= x * std::log(x);
    }
  return h;
}

inline double entropic_objective(const Eigen::MatrixXd& p, const Eigen::MatrixXd& cost,
                                 double reg) {
  if (p.rows() != cost.rows() || p.cols() != cost.cols())
    throw ConfigError("entropic_objective: coupling and cost shapes differ");
  return (p.array() * cost.array()).sum() - reg * coupling_entropy(p);
}

// Categorical draw of n index pairs (i, j) with probability proportional to
// P[i][j], with replacement.
inline std::vector<std::pair<int, int>> sample_coupling_indices(const Eigen::MatrixXd& p, int n,
                                                                std::mt19937_64& g) {
  if (n < 0) throw ConfigError("sample_coupling_indices: negative count");
  if ((p.array() < 0.0).any())
    throw ConfigError("sample_coupling_indices: negative coupling entry");
  const Eigen::Index n0 = p.rows(), n1 = p.cols();
  std::vector<double> cumulative(static_cast<std::size_t>(n0 * n1));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n0; ++i)
    for (Eigen::Index j = 0; j < n1; ++j) {
      total += p(i, j);
      cumulative[static_cast<std::size_t>(i * n1 + j)] = total;
    }
  if (!(total > 0.0)) throw ConfigError("sample_coupling_indices: coupling has no mass");
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    const double x = uniform01(g) * total;
    const auto pos = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    auto flat = static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(
        pos - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
    out.emplace_back(static_cast<int>(flat / n1), static_cast<int>(flat % n1));
  }
  return out;
}

// Re-pairs two batches by drawing n rows-pairs from the coupling.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_coupling(const Eigen::MatrixXd& p,
                                                                   const Eigen::MatrixXd& b0,
                                                                   const Eigen::MatrixXd& b1,
                                                                   int n, std::mt19937_64& g) {
  if (p.rows() != b0.rows() || p.cols() != b1.rows())
    throw ConfigError("sample_coupling: coupling shape does not match the batches");
  const auto idx = sample_coupling_indices(p, n, g);
  Eigen::MatrixXd x0(n, b0.cols()), x1(n, b1.cols());
  for (int s = 0; s < n; ++s) {
    x0.row(s) = b0.row(idx[static_cast<std::size_t>(s)].first);
    x1.row(s) = b1.row(idx[static_cast<std::size_t>(s)].second);
  }
  return {std::move(x0), std::move(x1)};
}

}  // namespace d3re
