#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "d3re/errors.hpp"
#include "d3re/rng.hpp"

namespace d3re {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Gaussian with one of three covariance structures: isotropic, diagonal, or
// block-diagonal with 2x2 blocks. All three are closed under the linear
// mixing the interpolants perform, so marginals stay in this family.
enum class CovKind { Scalar, Diagonal, Block2 };

struct GaussianSpec {
  Eigen::VectorXd mean;
  CovKind kind = CovKind::Scalar;
  double var = 1.0;                     // Scalar
  Eigen::VectorXd dvar;                 // Diagonal
  std::vector<Eigen::Matrix2d> blocks;  // Block2, covering coordinates pairwise

  static GaussianSpec isotropic(Eigen::VectorXd mean, double var) {
    if (!(var > 0.0)) throw ConfigError("gaussian: variance must be positive");
    GaussianSpec s;
    s.mean = std::move(mean);
    s.kind = CovKind::Scalar;
    s.var = var;
    return s;
  }

  static GaussianSpec diagonal(Eigen::VectorXd mean, Eigen::VectorXd vars) {
    if (vars.size() != mean.size()) throw ConfigError("gaussian: diagonal size mismatch");
    if (!(vars.minCoeff() > 0.0)) throw ConfigError("gaussian: variances must be positive");
    GaussianSpec s;
    s.mean = std::move(mean);
    s.kind = CovKind::Diagonal;
    s.dvar = std::move(vars);
    return s;
  }

  static GaussianSpec blocks2(Eigen::VectorXd mean, std::vector<Eigen::Matrix2d> blocks) {
    if (2 * static_cast<Eigen::Index>(blocks.size()) != mean.size())
      throw ConfigError("gaussian: block count does not cover the dimension");
    for (const auto& b : blocks) {
      if (std::abs(b(0, 1) - b(1, 0)) > 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff()))
        throw ConfigError("gaussian: covariance block not symmetric");
      if (!(b(0, 0) > 0.0) || !(b.determinant() > 0.0))
        throw ConfigError("gaussian: covariance block not positive definite");
    }
    GaussianSpec s;
    s.mean = std::move(mean);
    s.kind = CovKind::Block2;
    s.blocks = std::move(blocks);
    return s;
  }

  // d-dimensional zero-mean Gaussian whose coordinate pairs each share
  // correlation rho: the standard correlated-pairs construction for mutual
  // information studies.
  static GaussianSpec paired(Eigen::Index d, double rho) {
    if (d <= 0 || d % 2 != 0) throw ConfigError("gaussian: paired dimension must be positive even");
    if (!(std::abs(rho) < 1.0)) throw ConfigError("gaussian: |rho| must be below 1");
    Eigen::Matrix2d b;
    b << 1.0, rho, rho, 1.0;
    return blocks2(Eigen::VectorXd::Zero(d), std::vector<Eigen::Matrix2d>(d / 2, b));
  }

  Eigen::Index dim() const { return mean.size(); }

  // Covariance diagonal as a vector; exact for Scalar/Diagonal and the
  // diagonal entries for Block2.
  Eigen::VectorXd cov_diagonal() const {
    switch (kind) {
      case CovKind::Scalar:
        return Eigen::VectorXd::Constant(dim(), var);
      case CovKind::Diagonal:
        return dvar;
      case CovKind::Block2: {
        Eigen::VectorXd d(dim());
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          d[2 * b] = blocks[b](0, 0);
          d[2 * b + 1] = blocks[b](1, 1);
        }
        return d;
      }
    }
    throw ConfigError("gaussian: bad covariance kind");
  }

  // Covariance as explicit 2x2 blocks (requires even dimension).
  std::vector<Eigen::Matrix2d> cov_blocks() const {
    if (kind == CovKind::Block2) return blocks;
    if (dim() % 2 != 0) throw ConfigError("gaussian: odd dimension has no block view");
    const Eigen::VectorXd d = cov_diagonal();
    std::vector<Eigen::Matrix2d> out(static_cast<std::size_t>(dim() / 2));
    for (std::size_t b = 0; b < out.size(); ++b)
      out[b] = Eigen::Vector2d(d[2 * b], d[2 * b + 1]).asDiagonal();
    return out;
  }

  // Distribution of this variable plus independent N(0, eps I) noise.
  GaussianSpec convolved(double eps) const {
    if (eps < 0.0) throw ConfigError("gaussian: negative smoothing variance");
    if (eps == 0.0) return *this;
    GaussianSpec s = *this;
    switch (kind) {
      case CovKind::Scalar:
        s.var += eps;
        break;
      case CovKind::Diagonal:
        s.dvar.array() += eps;
        break;
      case CovKind::Block2:
        for (auto& b : s.blocks) b += eps * Eigen::Matrix2d::Identity();
        break;
    }
    return s;
  }
};

inline Eigen::MatrixXd gaussian_sample(const GaussianSpec& s, Eigen::Index n,
                                       std::mt19937_64& g) {
  Eigen::MatrixXd z = normal_matrix(g, n, s.dim());
  switch (s.kind) {
    case CovKind::Scalar:
      z *= std::sqrt(s.var);
      break;
    case CovKind::Diagonal:
      z = z * s.dvar.cwiseSqrt().asDiagonal();
      break;
    case CovKind::Block2:
      // Per-block 2x2 Cholesky keeps sampling exact and O(d) per sample.
      for (std::size_t b = 0; b < s.blocks.size(); ++b) {
        const auto& m = s.blocks[b];
        const double l11 = std::sqrt(m(0, 0));
        const double l21 = m(1, 0) / l11;
        const double l22 = std::sqrt(m(1, 1) - l21 * l21);
        const Eigen::Index c = static_cast<Eigen::Index>(2 * b);
        Eigen::VectorXd z0 = z.col(c);
        z.col(c) = l11 * z0;
        z.col(c + 1) = l21 * z0 + l22 * z.col(c + 1);
      }
      break;
  }
  z.rowwise() += s.mean.transpose();
  return z;
}

inline double gaussian_logpdf(const GaussianSpec& s, const Eigen::VectorXd& x) {
  if (x.size() != s.dim()) throw ConfigError("gaussian: point dimension mismatch");
  const Eigen::VectorXd d = x - s.mean;
  const double dd = static_cast<double>(s.dim());
  switch (s.kind) {
    case CovKind::Scalar:
      return -0.5 * dd * (kLogTwoPi + std::log(s.var)) - d.squaredNorm() / (2.0 * s.var);
    case CovKind::Diagonal:
      return -0.5 * dd * kLogTwoPi - 0.5 * s.dvar.array().log().sum() -
             0.5 * (d.array().square() / s.dvar.array()).sum();
    case CovKind::Block2: {
      double lp = -0.5 * dd * kLogTwoPi;
      for (std::size_t b = 0; b < s.blocks.size(); ++b) {
        const auto& m = s.blocks[b];
        const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        const Eigen::Vector2d u = d.segment<2>(static_cast<Eigen::Index>(2 * b));
        const double quad =
            (m(1, 1) * u[0] * u[0] - 2.0 * m(0, 1) * u[0] * u[1] + m(0, 0) * u[1] * u[1]) / det;
        lp += -0.5 * std::log(det) - 0.5 * quad;
      }
      return lp;
    }
  }
  throw ConfigError("gaussian: bad covariance kind");
}

inline Eigen::VectorXd gaussian_logpdf_batch(const GaussianSpec& s, const Eigen::MatrixXd& x) {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[i] = gaussian_logpdf(s, Eigen::VectorXd(x.row(i).transpose()));
  return out;
}

// KL(p || q) in closed form, reducing to per-coordinate or per-block terms.
inline double gaussian_kl(const GaussianSpec& p, const GaussianSpec& q) {
  if (p.dim() != q.dim()) throw ConfigError("gaussian: KL dimension mismatch");
  const Eigen::VectorXd dm = q.mean - p.mean;
  if (p.kind != CovKind::Block2 && q.kind != CovKind::Block2) {
    const Eigen::VectorXd vp = p.cov_diagonal();
    const Eigen::VectorXd vq = q.cov_diagonal();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.dim(); ++i)
      kl += 0.5 * (vp[i] / vq[i] + dm[i] * dm[i] / vq[i] - 1.0 + std::log(vq[i] / vp[i]));
    return kl;
  }
  const auto bp = p.cov_blocks();
  const auto bq = q.cov_blocks();
  double kl = 0.0;
  for (std::size_t b = 0; b < bp.size(); ++b) {
    const Eigen::Matrix2d qi = bq[b].inverse();
    const Eigen::Vector2d u = dm.segment<2>(static_cast<Eigen::Index>(2 * b));
    kl += 0.5 * ((qi * bp[b]).trace() + u.dot(qi * u) - 2.0 +
                 std::log(bq[b].determinant() / bp[b].determinant()));
  }
  return kl;
}

// Gaussian dequantization: perturb every row by independent N(0, eps I).
inline Eigen::MatrixXd dequantize(const Eigen::MatrixXd& batch, double eps,
                                  std::mt19937_64& g) {
  if (eps < 0.0) throw ConfigError("dequantize: negative smoothing variance");
  if (eps == 0.0) return batch;
  return batch + std::sqrt(eps) * normal_matrix(g, batch.rows(), batch.cols());
}

}  // namespace d3re
