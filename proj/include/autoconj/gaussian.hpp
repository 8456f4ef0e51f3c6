#pragma once

// Gaussian latent prior and the Gaussian posteriors/conditionals of the augmented model,
//   Sigma = (diag(d) + K^{-1})^{-1},   mu = Sigma (K^{-1} mu0 + b),
// computed without forming K^{-1}:
//   Sigma = K - K D^{1/2} (I + D^{1/2} K D^{1/2})^{-1} D^{1/2} K.

#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

/// GP prior over latent values at the training inputs: N(mean, K + jitter I).
struct LatentPrior {
  Eigen::MatrixXd cov;  ///< jittered Gram matrix, equal to factor.reconstruct()
  CholeskyFactor factor;
  Eigen::VectorXd mean;

  Eigen::Index size() const { return cov.rows(); }

  static LatentPrior from_covariance(const Eigen::MatrixXd& K, double jitter,
                                     std::optional<Eigen::VectorXd> mean = std::nullopt) {
    LatentPrior p;
    p.factor = chol_jitter(K, jitter);
    p.cov = K;
    p.cov.diagonal().array() += p.factor.jitter();
    p.mean = mean ? *mean : Eigen::VectorXd::Zero(K.rows());
    if (p.mean.size() != K.rows()) throw DimensionError("prior mean length does not match covariance");
    return p;
  }

  static LatentPrior build(const Eigen::MatrixXd& X, const KernelConfig& cfg,
                           std::optional<Eigen::VectorXd> mean = std::nullopt) {
    return from_covariance(gram(X, cfg), cfg.jitter, std::move(mean));
  }
};

/// Gaussian N(mean, cov) over latent values. When the distribution has the conditional form
/// (diag(d) + K^{-1})^{-1}, the site precisions d are kept so that KL terms against the
/// prior cost O(n^2).
struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::VectorXd prior_mean;
  double log_det = 0.0;
  std::optional<Eigen::VectorXd> site_precision;

  Eigen::Index size() const { return mean.size(); }

  /// The prior itself: m = mu0, S = K.
  static GaussianPosterior from_prior(const LatentPrior& prior) {
    GaussianPosterior q;
    q.mean = prior.mean;
    q.cov = prior.cov;
    q.prior_mean = prior.mean;
    q.log_det = prior.factor.log_det();
    q.site_precision = Eigen::VectorXd::Zero(prior.size());
    return q;
  }

  /// Arbitrary (m, S); S must be SPD.
  static GaussianPosterior from_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov, Eigen::VectorXd prior_mean) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size() || prior_mean.size() != mean.size()) {
      throw DimensionError("posterior moments have inconsistent sizes");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("posterior covariance is not positive definite");
    GaussianPosterior q;
    q.log_det = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    q.mean = std::move(mean);
    q.cov = std::move(cov);
    q.prior_mean = std::move(prior_mean);
    return q;
  }

  /// Lower Cholesky factor of cov (computed on demand; escalates jitter from 1e-10 on failure).
  Eigen::MatrixXd cholesky() const { return chol_jitter(cov, 0.0).matrix(); }

  Eigen::VectorXd sample(Rng& rng) const {
    return mean + cholesky().triangularView<Eigen::Lower>() * standard_normal_vector(size(), rng);
  }
};

/// Gaussian with precision diag(d) + K^{-1} and natural shift K^{-1} mu0 + b.
inline GaussianPosterior gaussian_conditional(const LatentPrior& prior, const Eigen::VectorXd& d,
                                              const Eigen::VectorXd& b) {
  const Eigen::Index n = prior.size();
  if (d.size() != n || b.size() != n) throw DimensionError("conditional: site vectors do not match prior size");
  if ((d.array() < 0.0).any() || !d.allFinite()) throw NumericalError("conditional: site precisions must be finite and >= 0");

  const Eigen::VectorXd sd = d.cwiseSqrt();
  // B = I + D^{1/2} K D^{1/2}
  Eigen::MatrixXd B = sd.asDiagonal() * prior.cov * sd.asDiagonal();
  B.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(B);
  if (llt.info() != Eigen::Success) throw NumericalError("conditional: I + D^1/2 K D^1/2 is not positive definite");

  // V = R^{-1} D^{1/2} K, Sigma = K - V^T V
  Eigen::MatrixXd V = sd.asDiagonal() * prior.cov;
  llt.matrixL().solveInPlace(V);
  Eigen::MatrixXd S = prior.cov;
  S.selfadjointView<Eigen::Lower>().rankUpdate(V.transpose(), -1.0);
  S.triangularView<Eigen::StrictlyUpper>() = S.transpose();

  GaussianPosterior q;
  q.prior_mean = prior.mean;
  const Eigen::VectorXd shift = prior.factor.solve(prior.mean) + b;
  q.mean = S * shift;
  q.log_det = prior.factor.log_det() - 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  q.cov = std::move(S);
  q.site_precision = d;
  return q;
}

/// Trace of K^{-1} S.
inline double trace_prior_inverse(const LatentPrior& prior, const GaussianPosterior& q) {
  if (q.site_precision) {
    // (D + K^{-1}) S = I  =>  tr(K^{-1} S) = n - sum_i d_i S_ii
    return static_cast<double>(q.size()) - q.site_precision->dot(q.cov.diagonal());
  }
  const Eigen::MatrixXd W = prior.factor.solve_lower(q.cholesky());
  return W.squaredNorm();
}

/// KL[N(m, S) || N(mu0, K)].
inline double kl_gaussian(const LatentPrior& prior, const GaussianPosterior& q) {
  if (q.size() != prior.size()) throw DimensionError("KL: size mismatch");
  const Eigen::VectorXd diff = prior.factor.solve_lower(q.mean - prior.mean);
  return 0.5 * (prior.factor.log_det() - q.log_det - static_cast<double>(q.size()) + trace_prior_inverse(prior, q) +
                diff.squaredNorm());
}

}  // namespace autoconj
