#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "d3re/errors.hpp"
#include "d3re/rng.hpp"

namespace d3re {

// The eight standard 2-D toy densities. The formulas below are normative for
// this library; every sampler draws its randomness in a fixed order so runs
// are reproducible from the seed.
enum class Toy {
  SwissRoll,
  Circles,
  Rings,
  Moons,
  EightGaussians,
  Pinwheel,
  TwoSpirals,
  Checkerboard,
};

inline const char* toy_name(Toy t) {
  switch (t) {
    case Toy::SwissRoll: return "swissroll";
    case Toy::Circles: return "circles";
    case Toy::Rings: return "rings";
    case Toy::Moons: return "moons";
    case Toy::EightGaussians: return "8gaussians";
    case Toy::Pinwheel: return "pinwheel";
    case Toy::TwoSpirals: return "2spirals";
    case Toy::Checkerboard: return "checkerboard";
  }
  throw ConfigError("toy: bad dataset id");
}

inline Toy toy_from_name(const std::string& name) {
  for (Toy t : {Toy::SwissRoll, Toy::Circles, Toy::Rings, Toy::Moons, Toy::EightGaussians,
                Toy::Pinwheel, Toy::TwoSpirals, Toy::Checkerboard})
    if (name == toy_name(t)) return t;
  throw ConfigError("toy: unknown dataset '" + name + "'");
}

inline Eigen::Vector2d eight_gaussians_mean(int k) {
  const double ang = kTwoPi * static_cast<double>(k) / 8.0;
  return {2.0 * std::cos(ang), 2.0 * std::sin(ang)};
}

// Checkerboard cells are 1 wide and 2 tall on [-4,4]^2; a cell is occupied
// when floor(x) and floor(y/2) have equal parity.
inline bool checkerboard_cell_occupied(double x, double y) {
  auto mod2 = [](double v) {
    const long long f = static_cast<long long>(std::floor(v));
    return ((f % 2) + 2) % 2;
  };
  return mod2(x) == mod2(y / 2.0);
}

inline Eigen::MatrixXd toy_sample(Toy which, Eigen::Index n, std::mt19937_64& g) {
  Eigen::MatrixXd out(n, 2);
  constexpr double kPi = kTwoPi / 2.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double x = 0, y = 0;
    switch (which) {
      case Toy::SwissRoll: {
        const double th = 1.5 * kPi + 3.0 * kPi * uniform01(g);
        x = th * std::cos(th) / 3.0 + 0.05 * normal01(g);
        y = th * std::sin(th) / 3.0 + 0.05 * normal01(g);
        break;
      }
      case Toy::Circles: {
        const double r = uniform01(g) < 0.5 ? 1.0 : 0.5;
        const double a = kTwoPi * uniform01(g);
        x = r * std::cos(a) + 0.08 * normal01(g);
        y = r * std::sin(a) + 0.08 * normal01(g);
        break;
      }
      case Toy::Rings: {
        const int k = static_cast<int>(uniform01(g) * 4.0);
        const double r = 0.25 * (k + 1);
        const double a = kTwoPi * uniform01(g);
        x = r * std::cos(a) + 0.025 * normal01(g);
        y = r * std::sin(a) + 0.025 * normal01(g);
        break;
      }
      case Toy::Moons: {
        const double t = kPi * uniform01(g);
        const bool upper = uniform01(g) < 0.5;
        if (upper) {
          x = std::cos(t);
          y = std::sin(t);
        } else {  // lower half-circle, shifted by (0.5, -0.25)
          x = 0.5 - std::cos(t);
          y = -0.25 - std::sin(t);
        }
        x += 0.08 * normal01(g);
        y += 0.08 * normal01(g);
        break;
      }
      case Toy::EightGaussians: {
        const int k = static_cast<int>(uniform01(g) * 8.0);
        const Eigen::Vector2d m = eight_gaussians_mean(k);
        x = m[0] + 0.2 * normal01(g);
        y = m[1] + 0.2 * normal01(g);
        break;
      }
      case Toy::Pinwheel: {
        // Five blades; the angle of each point is sheared by 0.3*exp(radial
        // feature), which twists the blades outward.
        const int k = static_cast<int>(uniform01(g) * 5.0);
        const double fr = 1.0 + 0.3 * normal01(g);
        const double ft = 0.05 * normal01(g);
        const double ang = kTwoPi * static_cast<double>(k) / 5.0 + 0.3 * std::exp(fr);
        x = fr * std::cos(ang) - ft * std::sin(ang);
        y = fr * std::sin(ang) + ft * std::cos(ang);
        break;
      }
      case Toy::TwoSpirals: {
        const double th = 3.0 * kPi * uniform01(g);
        const double r = 2.0 * th / kPi;
        const double sgn = uniform01(g) < 0.5 ? 1.0 : -1.0;
        x = sgn * r * std::cos(th) + 0.1 * normal01(g);
        y = sgn * r * std::sin(th) + 0.1 * normal01(g);
        break;
      }
      case Toy::Checkerboard: {
        x = -4.0 + 8.0 * uniform01(g);
        const long long p = ((static_cast<long long>(std::floor(x)) % 2) + 2) % 2;
        y = 2.0 * uniform01(g) + 2.0 * static_cast<double>(p);
        if (uniform01(g) < 0.5) y -= 4.0;  // tile down to cover [-4,4]
        break;
      }
    }
    out(i, 0) = x;
    out(i, 1) = y;
  }
  return out;
}

// High-probability bounding box {xmin, xmax, ymin, ymax}: the noise-free
// support padded by six noise standard deviations. Checkerboard is exact.
inline std::array<double, 4> toy_bounds(Toy which) {
  switch (which) {
    case Toy::SwissRoll: {
      const double r = 4.5 * (kTwoPi / 2.0) / 3.0 + 6.0 * 0.05;
      return {-r, r, -r, r};
    }
    case Toy::Circles: {
      const double r = 1.0 + 6.0 * 0.08;
      return {-r, r, -r, r};
    }
    case Toy::Rings: {
      const double r = 1.0 + 6.0 * 0.025;
      return {-r, r, -r, r};
    }
    case Toy::Moons:
      return {-1.0 - 6.0 * 0.08, 1.5 + 6.0 * 0.08, -1.25 - 6.0 * 0.08, 1.0 + 6.0 * 0.08};
    case Toy::EightGaussians: {
      const double r = 2.0 + 6.0 * 0.2;
      return {-r, r, -r, r};
    }
    case Toy::Pinwheel: {
      // radial feature within 1 +/- 6*0.3, tangential within 6*0.05
      const double r = std::hypot(2.8, 0.3);
      return {-r, r, -r, r};
    }
    case Toy::TwoSpirals: {
      const double r = 6.0 + 6.0 * 0.1;
      return {-r, r, -r, r};
    }
    case Toy::Checkerboard:
      return {-4.0, 4.0, -4.0, 4.0};
  }
  throw ConfigError("toy: bad dataset id");
}

}  // namespace d3re
