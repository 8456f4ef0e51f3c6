#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"

namespace autoconj {

/// ARD squared-exponential kernel k(x, x') = variance * exp(-sum_d (x_d - x'_d)^2 / l_d^2).
/// A single lengthscale is broadcast over all input dimensions.
struct KernelConfig {
  double variance = 1.0;
  Eigen::VectorXd lengthscales = Eigen::VectorXd::Ones(1);
  double jitter = 1e-6;

  void validate(Eigen::Index dims) const {
    if (!(variance > 0.0) || !std::isfinite(variance)) throw ConstraintError("kernel variance must be > 0");
    if (!(jitter >= 0.0)) throw ConstraintError("jitter must be >= 0");
    if (lengthscales.size() != 1 && lengthscales.size() != dims) {
      throw DimensionError("kernel has " + std::to_string(lengthscales.size()) +
                           " lengthscales but inputs have " + std::to_string(dims) + " columns");
    }
    for (double l : lengthscales) {
      if (!(l > 0.0)) throw ConstraintError("lengthscales must be > 0");
    }
  }

  Eigen::VectorXd resolved_lengthscales(Eigen::Index dims) const {
    validate(dims);
    if (lengthscales.size() == dims) return lengthscales;
    return Eigen::VectorXd::Constant(dims, lengthscales[0]);
  }
};

/// Cross-covariance matrix between the rows of X and X2.
inline Eigen::MatrixXd gram(const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2, const KernelConfig& cfg) {
  if (X.cols() != X2.cols()) throw DimensionError("gram: column counts differ");
  const Eigen::VectorXd inv_l = cfg.resolved_lengthscales(X.cols()).cwiseInverse();
  const Eigen::MatrixXd A = X * inv_l.asDiagonal();
  const Eigen::MatrixXd B = X2 * inv_l.asDiagonal();
  const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
  const Eigen::VectorXd b2 = B.rowwise().squaredNorm();
  Eigen::MatrixXd K = -2.0 * A * B.transpose();
  K.colwise() += a2;
  K.rowwise() += b2.transpose();
  return (-K.cwiseMax(0.0)).array().exp().matrix() * cfg.variance;
}

inline Eigen::MatrixXd gram(const Eigen::MatrixXd& X, const KernelConfig& cfg) {
  Eigen::MatrixXd K = gram(X, X, cfg);
  // Exact symmetry and unit correlation on the diagonal.
  K = 0.5 * (K + K.transpose()).eval();
  K.diagonal().setConstant(cfg.variance);
  return K;
}

/// Lower Cholesky factor of K + jitter * I, with the jitter that was actually applied.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  CholeskyFactor(Eigen::MatrixXd lower, double applied_jitter)
      : L_(std::move(lower)), jitter_(applied_jitter) {
    log_det_ = 2.0 * L_.diagonal().array().log().sum();
  }

  const Eigen::MatrixXd& matrix() const { return L_; }
  Eigen::Index size() const { return L_.rows(); }
  double jitter() const { return jitter_; }
  double log_det() const { return log_det_; }

  auto lower() const { return L_.triangularView<Eigen::Lower>(); }

  /// L^{-1} b
  template <typename Derived>
  Eigen::MatrixXd solve_lower(const Eigen::MatrixBase<Derived>& b) const {
    return lower().solve(b);
  }
  /// L^{-T} b
  template <typename Derived>
  Eigen::MatrixXd solve_upper(const Eigen::MatrixBase<Derived>& b) const {
    return L_.transpose().triangularView<Eigen::Upper>().solve(b);
  }
  /// (L L^T)^{-1} b
  template <typename Derived>
  Eigen::MatrixXd solve(const Eigen::MatrixBase<Derived>& b) const {
    return solve_upper(solve_lower(b));
  }
  /// L L^T
  Eigen::MatrixXd reconstruct() const { return L_ * L_.transpose(); }

 private:
  Eigen::MatrixXd L_;
  double jitter_ = 0.0;
  double log_det_ = 0.0;
};

/// Factor K + j I, starting at j = jitter and escalating tenfold (from 1e-10 when
/// jitter is zero) until the factorization succeeds or j would exceed 1e-2.
inline CholeskyFactor chol_jitter(const Eigen::MatrixXd& K, double jitter) {
  if (K.rows() != K.cols()) throw DimensionError("chol_jitter: matrix is not square");
  constexpr double kMaxJitter = 1e-2;
  double j = jitter;
  Eigen::MatrixXd A = K;
  while (true) {
    A = K;
    A.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
      return CholeskyFactor(llt.matrixL(), j);
    }
    const double next = j == 0.0 ? 1e-10 : 10.0 * j;
    if (next > kMaxJitter * (1.0 + 1e-12)) break;
    j = next;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K, Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "Cholesky factorization failed after jitter escalation to " << j << " (n = " << K.rows()
      << ", min eigenvalue " << eig.eigenvalues().minCoeff() << ", max eigenvalue "
      << eig.eigenvalues().maxCoeff() << ")";
  throw NumericalError(msg.str());
}

/// Prior covariance with an additive nugget on coincident inputs: k(x, x') + j [x == x'].
/// With j equal to the jitter of the training factor, cross-covariances stay consistent
/// with the jittered Gram matrix.
inline Eigen::MatrixXd cross_cov(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const KernelConfig& cfg,
                                 double nugget) {
  Eigen::MatrixXd K = gram(X, Z, cfg);
  if (nugget > 0.0) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index m = 0; m < Z.rows(); ++m) {
        if ((X.row(i).array() == Z.row(m).array()).all()) K(i, m) += nugget;
      }
    }
  }
  return K;
}

}  // namespace autoconj
