#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "d3re/errors.hpp"
#include "d3re/gaussian.hpp"
#include "d3re/rng.hpp"
#include "d3re/schedule.hpp"

namespace d3re {

// The four interpolant families between two sampled distributions:
//   DI    deterministic:        x_t = a x0 + b x1
//   DBI   diffusion bridge:     adds sqrt(t(1-t) gamma^2) noise
//   DDBI  dequantified bridge:  endpoints smoothed by N(0, eps I)
//   DSBI  Schroedinger bridge:  DDBI endpoints rearranged by entropic OT
enum class Method { DI, DBI, DDBI, DSBI };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::DI: return "di";
    case Method::DBI: return "dbi";
    case Method::DDBI: return "ddbi";
    case Method::DSBI: return "dsbi";
  }
  throw ConfigError("interpolant: bad method id");
}

inline Method method_from_name(const std::string& name) {
  for (Method m : {Method::DI, Method::DBI, Method::DDBI, Method::DSBI})
    if (name == method_name(m)) return m;
  throw ConfigError("interpolant: unknown method '" + name + "'");
}

struct InterpolantConfig {
  Method method = Method::DDBI;
  Schedule schedule;
  double gamma2 = 0.5;
  double epsilon = 1e-5;

  // DI carries no noise at all, so gamma2/epsilon are forced to zero there.
  // DBI has no dequantization; passing eps > 0 is rejected rather than
  // silently dropped. DSBI's optimal-transport step is only defined for the
  // linear schedule and needs a positive entropic regularizer 2*gamma2.
  static InterpolantConfig make(Method method, Schedule schedule, double gamma2,
                                double epsilon) {
    if (gamma2 < 0.0) throw ConfigError("interpolant: gamma2 must be nonnegative");
    if (epsilon < 0.0) throw ConfigError("interpolant: epsilon must be nonnegative");
    InterpolantConfig c;
    c.method = method;
    c.schedule = schedule;
    c.gamma2 = gamma2;
    c.epsilon = epsilon;
    switch (method) {
      case Method::DI:
        c.gamma2 = 0.0;
        c.epsilon = 0.0;
        break;
      case Method::DBI:
        if (epsilon > 0.0)
          throw ConfigError("interpolant: DBI has no dequantization; use DDBI");
        break;
      case Method::DDBI:
        break;
      case Method::DSBI:
        if (schedule.kind != Schedule::Kind::Linear)
          throw ConfigError("interpolant: DSBI requires the linear schedule");
        if (!(gamma2 > 0.0))
          throw ConfigError("interpolant: DSBI requires gamma2 > 0");
        break;
    }
    return c;
  }
};

struct Sigma2 {
  double value, deriv;
};

// Kernel variance of x_t given the raw endpoints, and its time derivative:
// t(1-t) gamma^2 from the bridge plus (alpha^2+beta^2) eps from smoothing.
inline Sigma2 sigma2(const InterpolantConfig& c, double t) {
  check_time(t);
  if (c.method == Method::DI) return {0.0, 0.0};
  const double bridge = t * (1.0 - t) * c.gamma2;
  const double dbridge = (1.0 - 2.0 * t) * c.gamma2;
  if (c.method == Method::DBI || c.epsilon == 0.0) return {bridge, dbridge};
  const ScheduleEval se = schedule_eval(c.schedule, t);
  const double smooth = (se.alpha * se.alpha + se.beta * se.beta) * c.epsilon;
  const double dsmooth = 2.0 * (se.alpha * se.dalpha + se.beta * se.dbeta) * c.epsilon;
  return {bridge + smooth, dbridge + dsmooth};
}

// One sampled point on a bridge path, keeping everything needed to evaluate
// conditional quantities at (x_t, t).
struct PathPoint {
  Eigen::VectorXd x0, x1;  // endpoints the path conditions on
  Eigen::VectorXd z;       // the standard normal draw
  Eigen::VectorXd xt;      // = alpha x0 + beta x1 + sigma_t z
  double t = 0.0;
};

inline PathPoint sample_path(const InterpolantConfig& c, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& x1, double t, std::mt19937_64& g) {
  if (x0.size() != x1.size()) throw ConfigError("interpolant: endpoint dimension mismatch");
  check_time(t);
  const ScheduleEval se = schedule_eval(c.schedule, t);
  PathPoint p;
  p.x0 = x0;
  p.x1 = x1;
  p.t = t;
  p.z = normal_vector(g, x0.size());
  p.xt = se.alpha * x0 + se.beta * x1 + std::sqrt(sigma2(c, t).value) * p.z;
  return p;
}

// log N(x; alpha x0 + beta x1, sigma_t^2 I). Degenerate kernels (DI, or the
// noise-free endpoints of DBI) have no density to differentiate.
inline double conditional_logpdf(const InterpolantConfig& c, const Eigen::VectorXd& x0,
                                 const Eigen::VectorXd& x1, double t,
                                 const Eigen::VectorXd& x) {
  const double s2 = sigma2(c, t).value;
  if (!(s2 > 0.0)) throw ConfigError("interpolant: conditional kernel is degenerate here");
  const ScheduleEval se = schedule_eval(c.schedule, t);
  const Eigen::VectorXd d = x - se.alpha * x0 - se.beta * x1;
  const double dd = static_cast<double>(x.size());
  return -0.5 * dd * (kLogTwoPi + std::log(s2)) - d.squaredNorm() / (2.0 * s2);
}

// Time derivative of the conditional kernel's log-density at the path point:
//   -d sig2'/(2 sig2) + (a' x0 + b' x1) . (x-mu)/sig2 + sig2' |x-mu|^2/(2 sig2^2)
inline double conditional_time_score(const InterpolantConfig& c, const PathPoint& p) {
  const Sigma2 s = sigma2(c, p.t);
  if (!(s.value > 0.0)) throw ConfigError("interpolant: conditional kernel is degenerate here");
  const ScheduleEval se = schedule_eval(c.schedule, p.t);
  const Eigen::VectorXd d = p.xt - se.alpha * p.x0 - se.beta * p.x1;
  const Eigen::VectorXd dmu = se.dalpha * p.x0 + se.dbeta * p.x1;
  const double dd = static_cast<double>(p.xt.size());
  return -dd * s.deriv / (2.0 * s.value) + dmu.dot(d) / s.value +
         s.deriv * d.squaredNorm() / (2.0 * s.value * s.value);
}

// Marginal of x_t when both endpoints are Gaussian and independently
// coupled: N(a mu0 + b mu1, a^2 S0 + b^2 S1 + sigma_t^2 I). Closed under the
// scalar/diagonal/block covariance kinds.
inline GaussianSpec gaussian_marginal(const InterpolantConfig& c, const GaussianSpec& q0,
                                      const GaussianSpec& q1, double t) {
  if (q0.dim() != q1.dim()) throw ConfigError("interpolant: endpoint dimension mismatch");
  const ScheduleEval se = schedule_eval(c.schedule, t);
  const double a2 = se.alpha * se.alpha;
  const double b2 = se.beta * se.beta;
  const double s2 = sigma2(c, t).value;
  Eigen::VectorXd mean = se.alpha * q0.mean + se.beta * q1.mean;

  if (q0.kind == CovKind::Block2 || q1.kind == CovKind::Block2) {
    const auto b0 = q0.cov_blocks();
    const auto b1 = q1.cov_blocks();
    std::vector<Eigen::Matrix2d> blocks(b0.size());
    for (std::size_t i = 0; i < b0.size(); ++i)
      blocks[i] = a2 * b0[i] + b2 * b1[i] + s2 * Eigen::Matrix2d::Identity();
    return GaussianSpec::blocks2(std::move(mean), std::move(blocks));
  }
  if (q0.kind == CovKind::Scalar && q1.kind == CovKind::Scalar)
    return GaussianSpec::isotropic(std::move(mean), a2 * q0.var + b2 * q1.var + s2);
  Eigen::VectorXd dv =
      (a2 * q0.cov_diagonal().array() + b2 * q1.cov_diagonal().array() + s2).matrix();
  return GaussianSpec::diagonal(std::move(mean), std::move(dv));
}

// Analytic time score of the Gaussian marginal above. This is the oracle the
// networks are trained to match on Gaussian pairs, and its time integral
// telescopes to the log density ratio of the (smoothed) endpoints.
inline double gaussian_marginal_time_score(const InterpolantConfig& c, const GaussianSpec& q0,
                                           const GaussianSpec& q1, double t,
                                           const Eigen::VectorXd& x) {
  if (q0.dim() != q1.dim() || x.size() != q0.dim())
    throw ConfigError("interpolant: dimension mismatch");
  const ScheduleEval se = schedule_eval(c.schedule, t);
  const Sigma2 s = sigma2(c, t);
  const double a2 = se.alpha * se.alpha, b2 = se.beta * se.beta;
  const double da2 = 2.0 * se.alpha * se.dalpha, db2 = 2.0 * se.beta * se.dbeta;
  const Eigen::VectorXd m = se.alpha * q0.mean + se.beta * q1.mean;
  const Eigen::VectorXd dm = se.dalpha * q0.mean + se.dbeta * q1.mean;
  const Eigen::VectorXd u = x - m;

  if (q0.kind == CovKind::Block2 || q1.kind == CovKind::Block2) {
    const auto c0 = q0.cov_blocks();
    const auto c1 = q1.cov_blocks();
    double score = 0.0;
    for (std::size_t i = 0; i < c0.size(); ++i) {
      const Eigen::Matrix2d S =
          a2 * c0[i] + b2 * c1[i] + s.value * Eigen::Matrix2d::Identity();
      const Eigen::Matrix2d dS =
          da2 * c0[i] + db2 * c1[i] + s.deriv * Eigen::Matrix2d::Identity();
      const Eigen::Matrix2d Si = S.inverse();
      const Eigen::Index k = static_cast<Eigen::Index>(2 * i);
      const Eigen::Vector2d ub = u.segment<2>(k);
      const Eigen::Vector2d dmb = dm.segment<2>(k);
      score += -0.5 * (Si * dS).trace() + ub.dot(Si * dmb) +
               0.5 * ub.dot(Si * dS * Si * ub);
    }
    return score;
  }
  const Eigen::VectorXd v0 = q0.cov_diagonal();
  const Eigen::VectorXd v1 = q1.cov_diagonal();
  double score = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double S = a2 * v0[i] + b2 * v1[i] + s.value;
    const double dS = da2 * v0[i] + db2 * v1[i] + s.deriv;
    score += -dS / (2.0 * S) + u[i] * dm[i] / S + u[i] * u[i] * dS / (2.0 * S * S);
  }
  return score;
}

}  // namespace d3re
