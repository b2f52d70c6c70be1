#pragma once

// Adam optimizer with bias correction.

#include <cmath>
#include <cstdint>

#include "d3re/errors.hpp"
#include "d3re/tensor.hpp"

namespace d3re {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("adam: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("adam: betas must lie in [0, 1)");
    if (eps <= 0.0) throw ConfigError("adam: eps must be positive");
  }
};

struct AdamState {
  ParamSet m, v;
  std::int64_t step = 0;

  static AdamState init(const ParamSet& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
  }
};

inline void adam_step(AdamState& state, ParamSet& params, const ParamSet& grads,
                      const AdamConfig& cfg = {}) {
  cfg.validate();
  if (!params.same_layout(grads) || !params.same_layout(state.m))
    throw ConfigError("adam: parameter layouts differ");
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Eigen::VectorXd& m = state.m.at(i).data();
    Eigen::VectorXd& v = state.v.at(i).data();
    const Eigen::VectorXd& g = grads.at(i).data();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    params.at(i).data().array() -=
        cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

}  // namespace d3re
