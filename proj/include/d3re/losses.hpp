#pragma once

// Training objectives for the time-score model: a supervised oracle loss,
// the integration-by-parts score-matching loss, its joint (time + data
// score) extension, and a logistic ratio-matching baseline.

#include <Eigen/Dense>

#include <cmath>

#include "d3re/errors.hpp"
#include "d3re/scorenet.hpp"
#include "d3re/tensor.hpp"

namespace d3re {

// Time weighting lambda(t) = scale * t * (1 - t) + offset. The default
// scale gamma^2 with zero offset vanishes at both ends, which makes the
// boundary terms of the integration-by-parts losses drop out identically;
// a nonzero offset keeps them alive.
struct TimeWeight {
  double scale = 0.0;
  double offset = 0.0;

  double value(double t) const { return scale * t * (1.0 - t) + offset; }
  double deriv(double t) const { return scale * (1.0 - 2.0 * t); }
};

struct LossValue {
  double value = 0.0;
  ParamSet grads;
};

namespace detail {

inline void require_nonempty(const Eigen::MatrixXd& batch, const char* what) {
  if (batch.rows() < 1) throw ConfigError(std::string("loss: empty batch of ") + what);
}

}  // namespace detail

// Mean of lambda(t) (s(x,t) - oracle)^2. Supervised route, usable whenever
// the marginal time score is analytic.
inline LossValue loss_oracle_time(const ScoreModel& m, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& t, const Eigen::VectorXd& oracle,
                                  const TimeWeight& weight) {
  detail::require_nonempty(x, "interior points");
  if (t.size() != x.rows() || oracle.size() != x.rows())
    throw ConfigError("loss: one time and one oracle value per sample required");
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  const Eigen::MatrixXd out = score_forward(m, x, t);
  const Eigen::VectorXd lam = t.unaryExpr([&](double v) { return weight.value(v); });
  const Eigen::VectorXd resid = out.col(0) - oracle;

  LossValue lv;
  lv.value = inv_n * (lam.array() * resid.array().square()).sum();
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(x.rows(), m.config.out_width());
  upstream.col(0) = 2.0 * inv_n * lam.cwiseProduct(resid);
  lv.grads = score_backprop(m, x, t, upstream);
  return lv;
}

// Integration-by-parts form of the time-score matching loss:
//   boundary_weight * [lambda(0) E0 s - lambda(1) E1 s]
//   + E[lambda ds/dt + lambda' s + 1/2 lambda s^2].
inline LossValue loss_time_ibp(const ScoreModel& m, const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& x1, const Eigen::MatrixXd& xt,
                               const Eigen::VectorXd& t, const TimeWeight& weight,
                               double boundary_weight = 1.0) {
  detail::require_nonempty(x0, "start points");
  detail::require_nonempty(x1, "end points");
  detail::require_nonempty(xt, "interior points");
  if (t.size() != xt.rows()) throw ConfigError("loss: one time per interior sample required");
  const int out_w = m.config.out_width();
  const double lam0 = boundary_weight * weight.value(0.0);
  const double lam1 = boundary_weight * weight.value(1.0);

  LossValue lv;
  lv.grads = m.params.zeros_like();

  const Eigen::VectorXd t0 = Eigen::VectorXd::Zero(x0.rows());
  const Eigen::VectorXd t1 = Eigen::VectorXd::Ones(x1.rows());
  const Eigen::MatrixXd s0 = score_forward(m, x0, t0);
  const Eigen::MatrixXd s1 = score_forward(m, x1, t1);
  lv.value += lam0 * s0.col(0).mean() - lam1 * s1.col(0).mean();
  if (lam0 != 0.0) {
    Eigen::MatrixXd up0 = Eigen::MatrixXd::Zero(x0.rows(), out_w);
    up0.col(0).setConstant(lam0 / static_cast<double>(x0.rows()));
    param_axpy(1.0, score_backprop(m, x0, t0, up0), lv.grads);
  }
  if (lam1 != 0.0) {
    Eigen::MatrixXd up1 = Eigen::MatrixXd::Zero(x1.rows(), out_w);
    up1.col(0).setConstant(-lam1 / static_cast<double>(x1.rows()));
    param_axpy(1.0, score_backprop(m, x1, t1, up1), lv.grads);
  }

  const double inv_n = 1.0 / static_cast<double>(xt.rows());
  const Eigen::VectorXd lam = t.unaryExpr([&](double v) { return weight.value(v); });
  const Eigen::VectorXd dlam = t.unaryExpr([&](double v) { return weight.deriv(v); });
  const Dual d = score_dt(m, xt, t);
  const Eigen::VectorXd s = d.value.col(0);
  const Eigen::VectorXd ds = d.tangent.col(0);
  lv.value += inv_n * (lam.array() * ds.array() + dlam.array() * s.array() +
                       0.5 * lam.array() * s.array().square())
                          .sum();
  Eigen::MatrixXd up_value = Eigen::MatrixXd::Zero(xt.rows(), out_w);
  Eigen::MatrixXd up_tangent = Eigen::MatrixXd::Zero(xt.rows(), out_w);
  up_value.col(0) = inv_n * (dlam.array() + lam.array() * s.array()).matrix();
  up_tangent.col(0) = inv_n * lam;
  param_axpy(1.0, score_dt_backprop(m, xt, t, up_value, up_tangent), lv.grads);
  return lv;
}

// Joint score-matching loss over [time-score, data-score] heads:
//   2 * boundary_weight * [lambda(0) E0 s_t - lambda(1) E1 s_t]
//   + E[2 lambda ds_t/dt + 2 lambda' s_t + lambda |s_x|^2
//       + 2 lambda v' (grad_x s_x) v],  v ~ N(0, I) per sample.
inline LossValue loss_joint(const ScoreModel& m, const Eigen::MatrixXd& x0,
                            const Eigen::MatrixXd& x1, const Eigen::MatrixXd& xt,
                            const Eigen::VectorXd& t, const Eigen::MatrixXd& v,
                            const TimeWeight& weight, double boundary_weight = 1.0) {
  if (m.config.head != Head::Joint)
    throw ConfigError("loss: the joint objective needs the joint head");
  detail::require_nonempty(x0, "start points");
  detail::require_nonempty(x1, "end points");
  detail::require_nonempty(xt, "interior points");
  if (t.size() != xt.rows() || v.rows() != xt.rows() || v.cols() != xt.cols())
    throw ConfigError("loss: one time and one probe per interior sample required");
  const int d_in = m.config.input_dim;
  const int out_w = m.config.out_width();
  const double lam0 = 2.0 * boundary_weight * weight.value(0.0);
  const double lam1 = 2.0 * boundary_weight * weight.value(1.0);

  LossValue lv;
  lv.grads = m.params.zeros_like();

  const Eigen::VectorXd t0 = Eigen::VectorXd::Zero(x0.rows());
  const Eigen::VectorXd t1 = Eigen::VectorXd::Ones(x1.rows());
  lv.value += lam0 * score_forward(m, x0, t0).col(0).mean() -
              lam1 * score_forward(m, x1, t1).col(0).mean();
  if (lam0 != 0.0) {
    Eigen::MatrixXd up0 = Eigen::MatrixXd::Zero(x0.rows(), out_w);
    up0.col(0).setConstant(lam0 / static_cast<double>(x0.rows()));
    param_axpy(1.0, score_backprop(m, x0, t0, up0), lv.grads);
  }
  if (lam1 != 0.0) {
    Eigen::MatrixXd up1 = Eigen::MatrixXd::Zero(x1.rows(), out_w);
    up1.col(0).setConstant(-lam1 / static_cast<double>(x1.rows()));
    param_axpy(1.0, score_backprop(m, x1, t1, up1), lv.grads);
  }

  const double inv_n = 1.0 / static_cast<double>(xt.rows());
  const Eigen::VectorXd lam = t.unaryExpr([&](double tv) { return weight.value(tv); });
  const Eigen::VectorXd dlam = t.unaryExpr([&](double tv) { return weight.deriv(tv); });

  // Time pathway carries the value terms; the probe pathway only carries
  // its own tangent so nothing is double counted.
  const Dual dt_dual = score_dt(m, xt, t);
  const Dual xv_dual = score_x_jvp(m, xt, t, v);
  const Eigen::VectorXd st = dt_dual.value.col(0);
  const Eigen::VectorXd dst = dt_dual.tangent.col(0);
  const Eigen::MatrixXd sx = dt_dual.value.rightCols(d_in);
  const Eigen::VectorXd quad =
      (xv_dual.tangent.rightCols(d_in).array() * v.array()).rowwise().sum().matrix();

  lv.value += inv_n * (2.0 * lam.array() * dst.array() + 2.0 * dlam.array() * st.array() +
                       lam.array() * sx.array().square().rowwise().sum() +
                       2.0 * lam.array() * quad.array())
                          .sum();

  Eigen::MatrixXd up_value = Eigen::MatrixXd::Zero(xt.rows(), out_w);
  Eigen::MatrixXd up_tangent = Eigen::MatrixXd::Zero(xt.rows(), out_w);
  up_value.col(0) = 2.0 * inv_n * dlam;
  up_value.rightCols(d_in) = sx.array().colwise() * (2.0 * inv_n * lam.array());
  up_tangent.col(0) = 2.0 * inv_n * lam;
  param_axpy(1.0, score_dt_backprop(m, xt, t, up_value, up_tangent), lv.grads);

  Eigen::MatrixXd up_probe = Eigen::MatrixXd::Zero(xt.rows(), out_w);
  up_probe.rightCols(d_in) = v.array().colwise() * (2.0 * inv_n * lam.array());
  param_axpy(1.0,
             score_x_jvp_backprop(m, xt, t, v, Eigen::MatrixXd::Zero(xt.rows(), out_w),
                                  up_probe),
             lv.grads);
  return lv;
}

namespace detail {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

// Logistic ratio-matching baseline over a plain classifier f(x) = log r(x):
//   E0[softplus(f)] + E1[softplus(-f)], minimized at f = log(q1/q0).
inline LossValue loss_logistic(const ScoreModel& m, const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& x1) {
  if (m.config.time_input || m.config.head != Head::Time)
    throw ConfigError("loss: logistic baseline needs a scalar classifier without a time input");
  detail::require_nonempty(x0, "start points");
  detail::require_nonempty(x1, "end points");
  const Eigen::VectorXd none;
  const Eigen::VectorXd f0 = score_forward(m, x0, none).col(0);
  const Eigen::VectorXd f1 = score_forward(m, x1, none).col(0);

  LossValue lv;
  lv.value = f0.unaryExpr(&detail::softplus).mean() +
             (-f1).unaryExpr(&detail::softplus).mean();
  Eigen::MatrixXd up0(x0.rows(), 1), up1(x1.rows(), 1);
  up0.col(0) = f0.unaryExpr(&detail::sigmoid) / static_cast<double>(x0.rows());
  up1.col(0) = -(-f1).unaryExpr(&detail::sigmoid) / static_cast<double>(x1.rows());
  lv.grads = score_backprop(m, x0, none, up0);
  param_axpy(1.0, score_backprop(m, x1, none, up1), lv.grads);
  return lv;
}

}  // namespace d3re
