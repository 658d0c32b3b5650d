#pragma once

// Dense-matrix reference for the semigroup e^{t b L} on small grids.  The
// operator is the second-order nodal stencil; the exponential comes from the
// symmetric eigendecomposition of G = D^{-1} L_h D^{-1}, D = rho^{1/2}, so
// that e^{t b L} = D^{-1} V e^{t Lambda} V^T D.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "lamelab/varcoef.hpp"

namespace lamelab {

inline constexpr std::size_t kDenseOracleLimit = 4096;

/// Dense matrix of the nodal finite-difference Lame stencil; unknowns are
/// ordered like Field storage (component-major).
inline Eigen::MatrixXd assemble_stencil(const Grid& g, const LameParams& p) {
  const int n = g.dim();
  const std::size_t nodes = g.node_count();
  const std::size_t dofs = n * nodes;
  if (dofs > kDenseOracleLimit) throw std::invalid_argument("grid too large for the dense oracle");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dofs, dofs);
  const double h2 = g.spacing() * g.spacing();
  const double lm = p.lambda + p.mu;
  for (std::size_t k = 0; k < nodes; ++k) {
    const Index x = g.index(k);
    auto at = [&](int da, int a, int db, int b) {
      Index y = x;
      y[a] += da;
      y[b] += db;
      return g.node(y);
    };
    for (int i = 0; i < n; ++i) {
      const std::size_t row = i * nodes + k;
      for (int a = 0; a < n; ++a) {
        const double w = p.mu + (a == i ? lm : 0.0);
        A(row, i * nodes + at(1, a, 0, a)) += w / h2;
        A(row, i * nodes + at(-1, a, 0, a)) += w / h2;
        A(row, row) -= 2.0 * w / h2;
      }
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = 0.25 * lm / h2;
        A(row, j * nodes + at(1, i, 1, j)) += w;
        A(row, j * nodes + at(1, i, -1, j)) -= w;
        A(row, j * nodes + at(-1, i, 1, j)) -= w;
        A(row, j * nodes + at(-1, i, -1, j)) += w;
      }
    }
  }
  return A;
}

/// Eigendecomposition of the rho-symmetrized generator.
class DenseOracle {
 public:
  DenseOracle(const Coefficient& coef, const LameParams& params) : coef_(coef) {
    params.validate();
    const Grid& g = coef.grid();
    const int n = g.dim();
    const std::size_t nodes = g.node_count();
    const Eigen::MatrixXd L = assemble_stencil(g, params);
    stencil_asymmetry_ = (L - L.transpose()).cwiseAbs().maxCoeff() / L.cwiseAbs().maxCoeff();
    d_.resize(n * nodes);
    for (int c = 0; c < n; ++c)
      for (std::size_t k = 0; k < nodes; ++k) d_(c * nodes + k) = std::sqrt(coef.rho.at(0, k));
    const Eigen::VectorXd dinv = d_.cwiseInverse();
    Eigen::MatrixXd G = dinv.asDiagonal() * L * dinv.asDiagonal();
    G = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw NumericalError("dense eigendecomposition failed");
    lambda_ = es.eigenvalues();
    V_ = es.eigenvectors();
  }

  const Eigen::VectorXd& eigenvalues() const { return lambda_; }
  double stencil_asymmetry() const { return stencil_asymmetry_; }

  /// e^{t b L} u0.
  Field apply(const Field& u0, double t) const {
    if (!(t >= 0.0)) throw std::invalid_argument("oracle time must be nonnegative");
    if (!u0.is_vector() || !(u0.grid() == coef_.grid())) {
      throw std::invalid_argument("oracle input must be a vector field on the coefficient grid");
    }
    if (t == 0.0) return u0;
    const Eigen::Map<const Eigen::VectorXd> x(u0.values().data(), u0.values().size());
    const Eigen::VectorXd y =
        d_.cwiseInverse().cwiseProduct(V_ * ((t * lambda_).array().exp().matrix().cwiseProduct(
                                                V_.transpose() * d_.cwiseProduct(x))));
    Field out = u0;
    Eigen::Map<Eigen::VectorXd>(out.values().data(), out.values().size()) = y;
    return out;
  }

  /// Dense e^{t b L}.
  Eigen::MatrixXd propagator(double t) const {
    const Eigen::VectorXd e = (t * lambda_).array().exp();
    return d_.cwiseInverse().asDiagonal() * (V_ * e.asDiagonal() * V_.transpose()) * d_.asDiagonal();
  }

 private:
  Coefficient coef_;
  Eigen::VectorXd d_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXd V_;
  double stencil_asymmetry_ = 0.0;
};

inline Field dense_oracle_expm(const Coefficient& coef, const LameParams& params, const Field& u0,
                               double t) {
  if (coef.grid().dim() * coef.grid().node_count() > kDenseOracleLimit) {
    throw std::invalid_argument("grid too large for the dense oracle");
  }
  if (t == 0.0) return u0;
  return DenseOracle(coef, params).apply(u0, t);
}

/// Relative transpose defect max|M - M^T| / max|M|.
inline double transpose_defect(const Eigen::MatrixXd& M) {
  return (M - M.transpose()).cwiseAbs().maxCoeff() / M.cwiseAbs().maxCoeff();
}

/// Multiplies the columns of a dense propagator by b (right multiplication).
inline Eigen::MatrixXd times_b(const Eigen::MatrixXd& P, const Coefficient& coef) {
  const std::size_t nodes = coef.grid().node_count();
  Eigen::VectorXd b(P.cols());
  for (Eigen::Index i = 0; i < P.cols(); ++i) b(i) = coef.b.at(0, static_cast<std::size_t>(i) % nodes);
  return P * b.asDiagonal();
}

/// Growth rate bound of the twisted generator phi^{-1} (b L) phi in the
/// rho-weighted norm: the top eigenvalue of the symmetric part of
/// D phi^{-1} b L phi D^{-1}.
inline double twisted_growth_bound(const Coefficient& coef, const LameParams& params,
                                   const Field& phi) {
  const Grid& g = coef.grid();
  const int n = g.dim();
  const std::size_t nodes = g.node_count();
  const Eigen::MatrixXd L = assemble_stencil(g, params);
  Eigen::VectorXd left(n * nodes), right(n * nodes);
  for (int c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < nodes; ++k) {
      const double d = std::sqrt(coef.rho.at(0, k));
      left(c * nodes + k) = d * coef.b.at(0, k) / phi.at(0, k);
      right(c * nodes + k) = phi.at(0, k) / d;
    }
  }
  Eigen::MatrixXd T = left.asDiagonal() * L * right.asDiagonal();
  T = 0.5 * (T + T.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace lamelab
