#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "d3re/errors.hpp"
#include "d3re/rng.hpp"
#include "d3re/tensor.hpp"

namespace d3re {

// Fully connected net: tanh on hidden layers, identity on the output layer.
// widths = [in, hidden..., out]. Parameters are named "layer<i>.weight"
// (out x in, row-major) and "layer<i>.bias", in layer order; that order is
// also the checkpoint serialization order.
struct MlpSpec {
  std::vector<Eigen::Index> widths;

  int layers() const { return static_cast<int>(widths.size()) - 1; }

  void validate() const {
    if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
    for (Eigen::Index w : widths)
      if (w < 1) throw ConfigError("mlp: widths must be positive");
  }
};

inline std::string layer_weight_name(int l) { return "layer" + std::to_string(l) + ".weight"; }
inline std::string layer_bias_name(int l) { return "layer" + std::to_string(l) + ".bias"; }

// Hidden weights ~ N(0, 1/fan_in), biases zero. The output layer starts at
// zero by default so an untrained score is identically zero.
inline ParamSet mlp_init(const MlpSpec& spec, std::mt19937_64& g, bool zero_last = true) {
  spec.validate();
  ParamSet params;
  for (int l = 0; l < spec.layers(); ++l) {
    const Eigen::Index fan_in = spec.widths[l];
    const Eigen::Index fan_out = spec.widths[l + 1];
    Tensor w({fan_out, fan_in});
    const bool zero = zero_last && l == spec.layers() - 1;
    if (!zero) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal01(g);
    }
    params.add(layer_weight_name(l), std::move(w));
    params.add(layer_bias_name(l), Tensor({fan_out}));
  }
  return params;
}

namespace detail {

struct MlpTrace {
  std::vector<Eigen::MatrixXd> z;     // z[l] = input to layer l; z[L] = output
  std::vector<Eigen::MatrixXd> zdot;  // tangents of z (forward mode only)
  std::vector<Eigen::MatrixXd> adot;  // pre-activation tangents, hidden layers
};

inline void check_input(const MlpSpec& spec, const ParamSet& params, const Eigen::MatrixXd& x) {
  spec.validate();
  if (x.cols() != spec.widths.front()) throw ConfigError("mlp: input width mismatch");
  if (static_cast<int>(params.count()) < 2 * spec.layers())
    throw ConfigError("mlp: parameter count does not match spec");
}

inline Eigen::MatrixXd forward_trace(const MlpSpec& spec, const ParamSet& params,
                                     const Eigen::MatrixXd& x, MlpTrace& tr) {
  check_input(spec, params, x);
  const int L = spec.layers();
  tr.z.assign(static_cast<std::size_t>(L) + 1, {});
  tr.z[0] = x;
  for (int l = 0; l < L; ++l) {
    const auto w = params[layer_weight_name(l)].mat();
    const auto b = params[layer_bias_name(l)].vec();
    Eigen::MatrixXd a = tr.z[l] * w.transpose();
    a.rowwise() += b.transpose();
    tr.z[l + 1] = (l < L - 1) ? a.array().tanh().matrix() : a;
  }
  return tr.z[L];
}

inline Dual jvp_trace(const MlpSpec& spec, const ParamSet& params, const Dual& x, MlpTrace& tr) {
  check_input(spec, params, x.value);
  if (x.tangent.rows() != x.value.rows() || x.tangent.cols() != x.value.cols())
    throw ConfigError("mlp: tangent shape mismatch");
  const int L = spec.layers();
  tr.z.assign(static_cast<std::size_t>(L) + 1, {});
  tr.zdot.assign(static_cast<std::size_t>(L) + 1, {});
  tr.adot.assign(static_cast<std::size_t>(L), {});
  tr.z[0] = x.value;
  tr.zdot[0] = x.tangent;
  for (int l = 0; l < L; ++l) {
    const auto w = params[layer_weight_name(l)].mat();
    const auto b = params[layer_bias_name(l)].vec();
    Eigen::MatrixXd a = tr.z[l] * w.transpose();
    a.rowwise() += b.transpose();
    Eigen::MatrixXd ad = tr.zdot[l] * w.transpose();
    if (l < L - 1) {
      tr.z[l + 1] = a.array().tanh().matrix();
      tr.adot[l] = ad;
      tr.zdot[l + 1] = ((1.0 - tr.z[l + 1].array().square()) * ad.array()).matrix();
    } else {
      tr.z[l + 1] = a;
      tr.zdot[l + 1] = ad;
    }
  }
  return Dual{tr.z[L], tr.zdot[L]};
}

}  // namespace detail

inline Eigen::MatrixXd mlp_forward(const MlpSpec& spec, const ParamSet& params,
                                   const Eigen::MatrixXd& x) {
  detail::MlpTrace tr;
  return detail::forward_trace(spec, params, x, tr);
}

inline Dual mlp_jvp(const MlpSpec& spec, const ParamSet& params, const Dual& x) {
  detail::MlpTrace tr;
  return detail::jvp_trace(spec, params, x, tr);
}

// Gradient of sum(upstream .* output) with respect to every parameter.
inline ParamSet mlp_backprop(const MlpSpec& spec, const ParamSet& params,
                             const Eigen::MatrixXd& x, const Eigen::MatrixXd& upstream) {
  detail::MlpTrace tr;
  detail::forward_trace(spec, params, x, tr);
  if (upstream.rows() != x.rows() || upstream.cols() != spec.widths.back())
    throw ConfigError("mlp: upstream shape mismatch");

  ParamSet grads = params.zeros_like();
  const int L = spec.layers();
  Eigen::MatrixXd g = upstream;
  for (int l = L - 1; l >= 0; --l) {
    Eigen::MatrixXd da;
    if (l == L - 1) {
      da = g;
    } else {
      da = (g.array() * (1.0 - tr.z[l + 1].array().square())).matrix();
    }
    grads[layer_weight_name(l)].mat() = da.transpose() * tr.z[l];
    grads[layer_bias_name(l)].vec() = da.colwise().sum().transpose();
    if (l > 0) g = da * params[layer_weight_name(l)].mat();
  }
  return grads;
}

// Gradient of sum(up_value .* y + up_tangent .* ydot) w.r.t. parameters,
// where (y, ydot) = mlp_jvp(spec, params, x). This is reverse mode run over
// the forward-mode pass, so losses that involve directional derivatives of
// the net (time derivatives, Hutchinson probes) get exact parameter
// gradients rather than finite-difference approximations.
inline ParamSet mlp_jvp_backprop(const MlpSpec& spec, const ParamSet& params, const Dual& x,
                                 const Eigen::MatrixXd& up_value,
                                 const Eigen::MatrixXd& up_tangent) {
  detail::MlpTrace tr;
  detail::jvp_trace(spec, params, x, tr);
  if (up_value.rows() != x.value.rows() || up_value.cols() != spec.widths.back() ||
      up_tangent.rows() != x.value.rows() || up_tangent.cols() != spec.widths.back())
    throw ConfigError("mlp: upstream shape mismatch");

  ParamSet grads = params.zeros_like();
  const int L = spec.layers();
  Eigen::MatrixXd g = up_value;
  Eigen::MatrixXd gdot = up_tangent;
  for (int l = L - 1; l >= 0; --l) {
    Eigen::MatrixXd da, dadot;
    if (l == L - 1) {
      da = g;
      dadot = gdot;
    } else {
      // z = tanh(a): dz/da = 1 - z^2, and d(zdot)/da = -2 z (1 - z^2) adot.
      const auto& h = tr.z[l + 1];
      Eigen::ArrayXXd hp = 1.0 - h.array().square();
      da = (g.array() * hp - gdot.array() * 2.0 * h.array() * hp * tr.adot[l].array()).matrix();
      dadot = (gdot.array() * hp).matrix();
    }
    grads[layer_weight_name(l)].mat() =
        da.transpose() * tr.z[l] + dadot.transpose() * tr.zdot[l];
    grads[layer_bias_name(l)].vec() = da.colwise().sum().transpose();
    if (l > 0) {
      const auto w = params[layer_weight_name(l)].mat();
      g = da * w;
      gdot = dadot * w;
    }
  }
  return grads;
}

}  // namespace d3re
