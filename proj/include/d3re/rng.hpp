#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace d3re {

// Every random quantity in the library is drawn from an engine derived from
// one master seed and a per-purpose stream id, so that runs are reproducible
// and the streams for different purposes never alias.
enum class Stream : std::uint64_t {
  Source0 = 1,      // endpoint samples from q0
  Source1 = 2,      // endpoint samples from q1
  Dequantize = 3,   // Gaussian dequantization noise
  Bridge = 4,       // bridge noise z along the path
  TimeGrid = 5,     // stratified t draws
  Coupling = 6,     // resampling pairs from a transport plan
  ParamInit = 7,    // network weight init
  Hutchinson = 8,   // probe vectors for the trace estimator
  Eval = 9,         // held-out evaluation draws
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_engine(std::uint64_t seed, Stream stream) {
  const std::uint64_t mixed =
      splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
  return std::mt19937_64(mixed);
}

// 53-bit uniform in [0, 1).
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline constexpr double kTwoPi = 6.283185307179586476925287;

// Box-Muller. std::normal_distribution's output sequence is
// implementation-defined, which would make seeded artifacts differ across
// standard libraries; this keeps them bit-reproducible.
inline double normal01(std::mt19937_64& g) {
  double u1 = uniform01(g);
  while (u1 == 0.0) u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline Eigen::VectorXd normal_vector(std::mt19937_64& g, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal01(g);
  return v;
}

// Filled sample-by-sample (row-major order) so the draw sequence for one
// sample does not depend on how many samples follow it.
inline Eigen::MatrixXd normal_matrix(std::mt19937_64& g, Eigen::Index rows,
                                     Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal01(g);
  return m;
}

}  // namespace d3re
