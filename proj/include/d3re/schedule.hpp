#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "d3re/errors.hpp"

namespace d3re {

// Interpolation coefficient schedules (alpha_t, beta_t) with analytic time
// derivatives. Finite differences are reserved for the tests.
struct Schedule {
  enum class Kind { Linear, VP, TRE } kind = Kind::Linear;
  double beta_min = 0.1;    // VP
  double beta_max = 20.0;   // VP
  std::vector<double> eta;  // TRE: grid values at m/M, increasing 0 -> 1

  static Schedule linear() { return Schedule{}; }

  static Schedule vp(double beta_min, double beta_max) {
    if (!(beta_min > 0.0) || !(beta_max > beta_min))
      throw ConfigError("schedule: VP requires 0 < beta_min < beta_max");
    Schedule s;
    s.kind = Kind::VP;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    return s;
  }

  static Schedule tre(std::vector<double> eta) {
    if (eta.size() < 2) throw ConfigError("schedule: TRE needs at least two grid values");
    if (std::abs(eta.front()) > 1e-12 || std::abs(eta.back() - 1.0) > 1e-12)
      throw ConfigError("schedule: TRE grid must run from 0 to 1");
    for (std::size_t i = 1; i < eta.size(); ++i)
      if (!(eta[i] > eta[i - 1])) throw ConfigError("schedule: TRE grid must increase strictly");
    eta.front() = 0.0;
    eta.back() = 1.0;
    Schedule s;
    s.kind = Kind::TRE;
    s.eta = std::move(eta);
    return s;
  }
};

struct ScheduleEval {
  double alpha, beta, dalpha, dbeta;
};

inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("time outside [0,1]");
}

inline ScheduleEval schedule_eval(const Schedule& s, double t) {
  check_time(t);
  switch (s.kind) {
    case Schedule::Kind::Linear:
      return {1.0 - t, t, -1.0, 1.0};
    case Schedule::Kind::VP: {
      const double u = 0.25 * (s.beta_max - s.beta_min) * t * t + 0.5 * s.beta_min * t;
      const double du = 0.5 * (s.beta_max - s.beta_min) * t + 0.5 * s.beta_min;
      double alpha = std::exp(-u);
      double dalpha = -du * alpha;
      if (alpha < 1e-6) {  // clamp far tail; derivatives flatten there
        alpha = 1e-6;
        dalpha = 0.0;
      }
      const double beta = std::sqrt(std::max(1.0 - alpha * alpha, 0.0));
      // beta^2 = 1 - alpha^2, so dbeta = -alpha dalpha / beta. The rate
      // genuinely diverges as t -> 0+; the floor keeps the value finite at
      // the single endpoint.
      const double dbeta = -alpha * dalpha / std::max(beta, 1e-12);
      return {alpha, beta, dalpha, dbeta};
    }
    case Schedule::Kind::TRE: {
      const std::size_t segments = s.eta.size() - 1;
      std::size_t k = static_cast<std::size_t>(t * static_cast<double>(segments));
      if (k >= segments) k = segments - 1;
      const double h = 1.0 / static_cast<double>(segments);
      const double frac = (t - static_cast<double>(k) * h) / h;
      const double eta = s.eta[k] + (s.eta[k + 1] - s.eta[k]) * frac;
      const double deta = (s.eta[k + 1] - s.eta[k]) / h;
      const double alpha = std::sqrt(std::max(1.0 - eta * eta, 0.0));
      const double dalpha = -eta * deta / std::max(alpha, 1e-12);
      return {alpha, eta, dalpha, deta};
    }
  }
  throw ConfigError("schedule: bad kind");
}

}  // namespace d3re
