#pragma once

// Turns a time score into numbers. The log density ratio is the integral of
// s(x, t) over t in [0, 1]; averaging it over samples gives mutual
// information, and adding the base log density gives absolute densities.
// Three integrators are provided with explicit function-evaluation (NFE)
// accounting: fixed-node Gauss-Legendre quadrature (the default; the
// integrand has no state coupling, so quadrature beats ODE stepping per
// evaluation), fixed-step RK4, and adaptive Dormand-Prince RK45 for NFE
// comparisons between training schemes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "d3re/errors.hpp"
#include "d3re/gaussian.hpp"
#include "d3re/interpolant.hpp"
#include "d3re/scorenet.hpp"

namespace d3re {

enum class IntegratorKind { GaussLegendre, RK4, RK45 };

inline const char* integrator_name(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::GaussLegendre: return "gl";
    case IntegratorKind::RK4: return "rk4";
    case IntegratorKind::RK45: return "rk45";
  }
  throw ConfigError("integrator: unknown kind");
}

inline IntegratorKind integrator_from_name(const std::string& name) {
  if (name == "gl") return IntegratorKind::GaussLegendre;
  if (name == "rk4") return IntegratorKind::RK4;
  if (name == "rk45") return IntegratorKind::RK45;
  throw ConfigError("integrator: unknown kind: " + name);
}

struct IntegratorConfig {
  IntegratorKind kind = IntegratorKind::GaussLegendre;
  int nodes = 64;      // Gauss-Legendre
  int steps = 128;     // RK4
  double rtol = 1e-5;  // RK45
  double atol = 1e-7;

  void validate() const {
    if (nodes < 1) throw ConfigError("integrator: nodes must be at least 1");
    if (steps < 1) throw ConfigError("integrator: steps must be at least 1");
    if (rtol <= 0.0) throw ConfigError("integrator: rtol must be positive");
    if (atol < 0.0) throw ConfigError("integrator: atol must be nonnegative");
  }
};

// Batched scalar time score: one value per row of x at a common time t.
using TimeScore = std::function<Eigen::VectorXd(const Eigen::MatrixXd&, double)>;

// Wraps a trained model. A joint head contributes its time component. The
// model is captured by reference and must outlive the callable.
inline TimeScore net_time_score(const ScoreModel& m) {
  return [&m](const Eigen::MatrixXd& x, double t) -> Eigen::VectorXd {
    return score_forward(m, x, Eigen::VectorXd::Constant(x.rows(), t)).col(0);
  };
}

// Analytic time score of the interpolant marginal between Gaussian
// endpoints; the reference implementation the trained models chase.
inline TimeScore oracle_time_score(const InterpolantConfig& ic, const GaussianSpec& q0,
                                   const GaussianSpec& q1) {
  return [ic, q0, q1](const Eigen::MatrixXd& x, double t) -> Eigen::VectorXd {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out[i] = gaussian_marginal_time_score(ic, q0, q1, t, x.row(i).transpose());
    return out;
  };
}

namespace detail {

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
// three-term recurrence. Machine precision for any practical node count.
inline void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kTwoPi * 0.5 * (i + 0.75) / (n + 0.5));
    double p1 = 0.0, dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    // One clean evaluation at the converged node for the weight.
    double p0 = 1.0;
    p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    weights[n - 1 - i] = weights[i];
  }
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Dormand-Prince 5(4) on the state-free problem y' = f(t), y(0) = 0, over
// [0, 1]. FSAL: the seventh stage of an accepted step seeds the next one,
// so NFE = 1 + 6 * attempts. Stage values at equal times coincide here, but
// each is still a genuine evaluation and is counted as such.
inline void dopri45(const std::function<double(double)>& f, double rtol, double atol,
                    double& integral, long& nfe) {
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                   b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                   e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;
  constexpr double hmin = 1e-12;
  constexpr long max_attempts = 1000000;

  double t = 0.0, y = 0.0, h = 0.05;
  double k1 = f(0.0);
  nfe = 1;
  long attempts = 0;
  while (t < 1.0 && 1.0 - t > 1e-14) {
    h = std::min(h, 1.0 - t);
    if (++attempts > max_attempts)
      throw NumericError("integrate: step budget exhausted at t=" + fmt_double(t) +
                         " (partial integral " + fmt_double(y) + ")");
    const double k2 = f(t + c2 * h);
    const double k3 = f(t + c3 * h);
    const double k4 = f(t + c4 * h);
    const double k5 = f(t + c5 * h);
    const double k6 = f(t + h);
    const double ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double k7 = f(t + h);
    nfe += 6;
    const double ylow = y + h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    if (!std::isfinite(ynew) || !std::isfinite(ylow))
      throw NumericError("integrate: non-finite integrand at t=" + fmt_double(t) +
                         " (partial integral " + fmt_double(y) + ")");
    const double scale = atol + rtol * std::max(std::abs(y), std::abs(ynew));
    const double err = std::abs(ynew - ylow) / scale;
    const bool accept = err <= 1.0;
    if (accept) {
      t += h;
      y = ynew;
      k1 = k7;
    } else if (h <= hmin) {
      throw NumericError("integrate: adaptive step underflow at t=" + fmt_double(t) +
                         " (partial integral " + fmt_double(y) + ")");
    }
    const double factor = 0.9 * std::pow(std::max(err, 1e-16), -0.2);
    h = std::max(h * std::clamp(factor, 0.2, 5.0), hmin);
  }
  integral = y;
}

}  // namespace detail

struct LogRatioBatch {
  Eigen::VectorXd values;  // integral of s(x_i, .) over [0, 1] per row
  std::vector<long> nfe;   // score evaluations spent on each point
  long nfe_total = 0;
};

inline LogRatioBatch integrate_logratio_batch(const TimeScore& s, const Eigen::MatrixXd& xs,
                                              const IntegratorConfig& cfg) {
  cfg.validate();
  if (xs.rows() == 0) throw ConfigError("integrate: empty point batch");
  const Eigen::Index n = xs.rows();
  LogRatioBatch out;
  switch (cfg.kind) {
    case IntegratorKind::GaussLegendre: {
      Eigen::VectorXd nodes, w;
      detail::gauss_legendre(cfg.nodes, nodes, w);
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
      for (int j = 0; j < cfg.nodes; ++j)
        acc += (0.5 * w[j]) * s(xs, 0.5 * (1.0 + nodes[j]));
      out.values = acc;
      out.nfe.assign(static_cast<std::size_t>(n), cfg.nodes);
      break;
    }
    case IntegratorKind::RK4: {
      const double h = 1.0 / cfg.steps;
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < cfg.steps; ++i) {
        const double t = i * h;
        const Eigen::VectorXd k1 = s(xs, t);
        const Eigen::VectorXd k2 = s(xs, t + 0.5 * h);
        const Eigen::VectorXd k3 = s(xs, t + 0.5 * h);
        const Eigen::VectorXd k4 = s(xs, t + h);
        acc += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      out.values = acc;
      out.nfe.assign(static_cast<std::size_t>(n), 4L * cfg.steps);
      break;
    }
    case IntegratorKind::RK45: {
      out.values.resize(n);
      out.nfe.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::MatrixXd row = xs.row(i);
        detail::dopri45([&](double t) { return s(row, t)[0]; }, cfg.rtol, cfg.atol,
                        out.values[i], out.nfe[static_cast<std::size_t>(i)]);
      }
      break;
    }
  }
  if (!out.values.allFinite()) throw NumericError("integrate: non-finite log ratio");
  for (long k : out.nfe) out.nfe_total += k;
  return out;
}

struct LogRatioResult {
  double value = 0.0;
  long nfe = 0;
};

inline LogRatioResult integrate_logratio(const TimeScore& s, const Eigen::VectorXd& x,
                                         const IntegratorConfig& cfg) {
  const LogRatioBatch b = integrate_logratio_batch(s, x.transpose(), cfg);
  return LogRatioResult{b.values[0], b.nfe[0]};
}

struct MiReport {
  double estimate = 0.0;
  double std_error = 0.0;  // sample standard error of the per-point log ratios
  Eigen::Index n = 0;
  long nfe_total = 0;
  double nfe_median = 0.0;
  long nfe_min = 0;
  long nfe_max = 0;
};

// Mutual information as the mean integrated log ratio over samples from the
// joint distribution (the ratio's numerator).
inline MiReport estimate_mi(const TimeScore& s, const Eigen::MatrixXd& samples,
                            const IntegratorConfig& cfg) {
  const LogRatioBatch b = integrate_logratio_batch(s, samples, cfg);
  MiReport r;
  r.n = samples.rows();
  r.estimate = b.values.mean();
  if (r.n > 1) {
    const double var =
        (b.values.array() - r.estimate).square().sum() / static_cast<double>(r.n - 1);
    r.std_error = std::sqrt(var / static_cast<double>(r.n));
  }
  r.nfe_total = b.nfe_total;
  std::vector<long> sorted = b.nfe;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  r.nfe_median = (m % 2 == 1)
                     ? static_cast<double>(sorted[m / 2])
                     : 0.5 * (static_cast<double>(sorted[m / 2 - 1]) +
                              static_cast<double>(sorted[m / 2]));
  r.nfe_min = sorted.front();
  r.nfe_max = sorted.back();
  return r;
}

// log q1(x) ~= integral of s + log q0(x) for an analytic base q0.
inline double log_density(const TimeScore& s, const Eigen::VectorXd& x, const GaussianSpec& q0,
                          const IntegratorConfig& cfg) {
  return integrate_logratio(s, x, cfg).value + gaussian_logpdf(q0, x);
}

struct DensityGrid {
  Eigen::VectorXd x_coords;     // nx ascending
  Eigen::VectorXd y_coords;     // ny ascending
  Eigen::MatrixXd log_density;  // (ny, nx); entry (i, j) sits at (x_coords[j], y_coords[i])
  long nfe_total = 0;
};

inline DensityGrid density_grid(const TimeScore& s, const GaussianSpec& q0,
                                const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, int nx,
                                int ny, const IntegratorConfig& cfg) {
  if (q0.dim() != 2) throw ConfigError("density grid: a 2-d base distribution is required");
  if (nx < 2 || ny < 2) throw ConfigError("density grid: resolution must be at least 2 per axis");
  if (!(lo[0] < hi[0]) || !(lo[1] < hi[1]))
    throw ConfigError("density grid: bounds must be increasing");

  DensityGrid grid;
  grid.x_coords = Eigen::VectorXd::LinSpaced(nx, lo[0], hi[0]);
  grid.y_coords = Eigen::VectorXd::LinSpaced(ny, lo[1], hi[1]);
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(nx) * ny, 2);
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j)
      pts.row(static_cast<Eigen::Index>(i) * nx + j) =
          Eigen::RowVector2d(grid.x_coords[j], grid.y_coords[i]);

  const LogRatioBatch b = integrate_logratio_batch(s, pts, cfg);
  const Eigen::VectorXd base = gaussian_logpdf_batch(q0, pts);
  grid.log_density.resize(ny, nx);
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j) {
      const Eigen::Index k = static_cast<Eigen::Index>(i) * nx + j;
      grid.log_density(i, j) = b.values[k] + base[k];
    }
  grid.nfe_total = b.nfe_total;
  return grid;
}

}  // namespace d3re
