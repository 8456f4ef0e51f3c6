#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"
#include "autoconj/gaussian.hpp"
#include "autoconj/gibbs.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/quadrature.hpp"
#include "autoconj/svgp.hpp"

namespace autoconj {

/// E_{N(mean, var)}[integrand(f)] by Gauss-Hermite quadrature of the given order.
template <typename Fn>
double gh_expectation(double mean, double var, Fn&& integrand, int order = 32) {
  return gh_expect(mean, var, std::forward<Fn>(integrand), order);
}

/// log E_{N(mean, var)}[exp(log_integrand(f))], accumulated in log space.
template <typename Fn>
double gh_log_expectation(double mean, double var, Fn&& log_integrand, int order = 32) {
  if (!(var >= 0.0)) throw DomainError("Gauss-Hermite expectation needs var >= 0");
  const HermiteRule& rule = gauss_hermite(order);
  const double scale = std::sqrt(2.0 * var);
  Eigen::VectorXd terms(rule.nodes.size());
  for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) {
    const double v = log_integrand(mean + scale * rule.nodes[i]);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericalError("non-finite integrand at a Gauss-Hermite node");
    }
    terms[i] = std::log(rule.weights[i]) + v;
  }
  const double top = terms.maxCoeff();
  if (top == -std::numeric_limits<double>::infinity()) return top;
  return top + std::log((terms.array() - top).exp().sum());
}

/// gh_log_expectation starting at `order` and doubling while consecutive orders differ by more
/// than rel_tol in the expectation (absolute in log space), up to max_order.
template <typename Fn>
double gh_log_expectation_adaptive(double mean, double var, Fn&& log_integrand, int order = 32,
                                   double rel_tol = 1e-6, int max_order = 1024) {
  double prev = gh_log_expectation(mean, var, log_integrand, order);
  while (order < max_order) {
    order *= 2;
    const double next = gh_log_expectation(mean, var, log_integrand, order);
    if (std::abs(next - prev) <= rel_tol) return next;
    prev = next;
  }
  return prev;
}

/// Latent marginals at Xstar of a Gaussian over f at inputs Z with covariance factor `factor`:
/// mean = K_*Z K_Z^{-1} m, var = k_** - diag(K_*Z K_Z^{-1} K_Z*) + diag(K_*Z K_Z^{-1} S K_Z^{-1} K_Z*).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> conditional_latent(const CholeskyFactor& factor,
                                                                      const Eigen::MatrixXd& Z,
                                                                      const KernelConfig& cfg,
                                                                      const Eigen::VectorXd& m,
                                                                      const Eigen::MatrixXd& S,
                                                                      const Eigen::MatrixXd& Xstar) {
  if (Xstar.cols() != Z.cols()) throw DimensionError("test inputs have a different column count than training inputs");
  if (m.size() != Z.rows() || S.rows() != Z.rows()) throw DimensionError("posterior size does not match inputs");
  const Eigen::MatrixXd A = factor.solve_lower(cross_cov(Xstar, Z, cfg, factor.jitter()).transpose());
  const Eigen::MatrixXd Sw = factor.solve_lower(factor.solve_lower(S).transpose());
  Eigen::VectorXd mean = A.transpose() * factor.solve_lower(m);
  const Eigen::MatrixXd SA = Sw * A;
  const double kss = cfg.variance + factor.jitter();
  Eigen::VectorXd var(Xstar.rows());
  for (Eigen::Index j = 0; j < Xstar.rows(); ++j) {
    const double residual = std::max(0.0, kss - A.col(j).squaredNorm());
    var[j] = std::max(0.0, residual + A.col(j).dot(SA.col(j)));
  }
  return {std::move(mean), std::move(var)};
}

/// Full-GP latent predictive from q(f) at the training inputs.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_latent(const GaussianPosterior& q,
                                                                  const LatentPrior& prior,
                                                                  const Eigen::MatrixXd& Xtrain,
                                                                  const KernelConfig& cfg,
                                                                  const Eigen::MatrixXd& Xstar) {
  if (Xtrain.rows() != prior.size()) throw DimensionError("training inputs do not match the prior");
  return conditional_latent(prior.factor, Xtrain, cfg, q.mean, q.cov, Xstar);
}

struct PredictiveSummary {
  Support task = Support::regression;
  Eigen::VectorXd latent_mean;
  Eigen::VectorXd latent_var;
  Eigen::VectorXd log_density;  ///< log p(y*_i) of the observed test target
  Eigen::VectorXd prob_plus;    ///< binary only: P(y* = +1)
  Eigen::VectorXd prediction;   ///< predictive mean of y (regression) or predicted label
  double nll = 0.0;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double error_rate = std::numeric_limits<double>::quiet_NaN();
  bool calibrated = true;  ///< false for the margin pseudo-likelihood of the SVM
};

namespace detail {

template <SuperGaussian L>
double class_log_prob(const L& lik, double label, double f) {
  const double lp = log_likelihood(lik, 1.0, f);
  const double lm = log_likelihood(lik, -1.0, f);
  const double top = std::max(lp, lm);
  return (label > 0 ? lp : lm) - top - std::log(std::exp(lp - top) + std::exp(lm - top));
}

template <SuperGaussian L>
void finish_summary(PredictiveSummary& out, const L& lik, const Eigen::VectorXd& ytest) {
  const Eigen::Index n = ytest.size();
  out.nll = -out.log_density.mean();
  if (!std::isfinite(out.nll)) throw NumericalError("predictive NLL is not finite");
  if (lik.support() == Support::binary) {
    out.prediction.resize(n);
    double errors = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      out.prediction[i] = out.prob_plus[i] >= 0.5 ? 1.0 : -1.0;
      errors += out.prediction[i] != ytest[i] ? 1.0 : 0.0;
    }
    out.error_rate = errors / static_cast<double>(n);
  } else {
    out.prediction = out.latent_mean;
    out.rmse = std::sqrt((out.prediction - ytest).squaredNorm() / static_cast<double>(n));
  }
}

template <SuperGaussian L>
void prepare_summary(PredictiveSummary& out, const L& lik, const Eigen::VectorXd& ytest) {
  if (ytest.size() < 1) throw DimensionError("empty test set");
  check_targets(lik, ytest);
  out.task = lik.support();
  if constexpr (std::is_same_v<L, Likelihood>) out.calibrated = lik.family() != Family::bayesian_svm;
}

}  // namespace detail

/// Predictive summary from Gaussian latent marginals N(mean_i, var_i) at the test inputs.
template <SuperGaussian L>
PredictiveSummary evaluate_marginals(const Eigen::VectorXd& mean, const Eigen::VectorXd& var,
                                     const Eigen::VectorXd& ytest, const L& lik, int order = 32) {
  if (mean.size() != ytest.size() || var.size() != ytest.size()) throw DimensionError("predictive size mismatch");
  PredictiveSummary out;
  detail::prepare_summary(out, lik, ytest);
  const Eigen::Index n = ytest.size();
  out.latent_mean = mean;
  out.latent_var = var;
  out.log_density.resize(n);
  if (out.task == Support::binary) out.prob_plus.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (out.task == Support::binary) {
      out.prob_plus[i] = gh_expect_adaptive(
          mean[i], var[i], [&](double f) { return std::exp(detail::class_log_prob(lik, 1.0, f)); }, order, 1e-6, 1024);
      out.log_density[i] = gh_log_expectation_adaptive(
          mean[i], var[i], [&](double f) { return detail::class_log_prob(lik, ytest[i], f); }, order);
    } else {
      out.log_density[i] = gh_log_expectation_adaptive(
          mean[i], var[i], [&](double f) { return log_likelihood(lik, ytest[i], f); }, order);
    }
  }
  detail::finish_summary(out, lik, ytest);
  return out;
}

/// Full-GP variational posterior.
template <SuperGaussian L>
PredictiveSummary evaluate(const GaussianPosterior& q, const LatentPrior& prior, const Eigen::MatrixXd& Xtrain,
                           const KernelConfig& cfg, const Eigen::MatrixXd& Xtest, const Eigen::VectorXd& ytest,
                           const L& lik, int order = 32) {
  if (Xtest.rows() != ytest.size()) throw DimensionError("test inputs and targets differ in length");
  const auto [mean, var] = predict_latent(q, prior, Xtrain, cfg, Xtest);
  return evaluate_marginals(mean, var, ytest, lik, order);
}

/// Sparse variational posterior.
template <SuperGaussian L>
PredictiveSummary evaluate(const SparseModel& model, const Eigen::MatrixXd& Xtest, const Eigen::VectorXd& ytest,
                           const L& lik, int order = 32) {
  if (Xtest.rows() != ytest.size()) throw DimensionError("test inputs and targets differ in length");
  const auto [mean, var] = predict_latent(model, Xtest);
  return evaluate_marginals(mean, var, ytest, lik, order);
}

/// Gibbs samples: the plug-in predictive p(y* | f^(s)) = E_{f* | f^(s)}[p(y* | f*)] averaged over
/// every retained sample of every chain.
template <SuperGaussian L>
PredictiveSummary evaluate(const ChainStore& store, const LatentPrior& prior, const Eigen::MatrixXd& Xtrain,
                           const KernelConfig& cfg, const Eigen::MatrixXd& Xtest, const Eigen::VectorXd& ytest,
                           const L& lik, int order = 32) {
  if (store.chains() == 0 || store.samples() == 0) throw DimensionError("empty sample store");
  if (store.dims() != prior.size() || Xtrain.rows() != prior.size()) throw DimensionError("samples do not match the training inputs");
  if (Xtest.rows() != ytest.size()) throw DimensionError("test inputs and targets differ in length");
  PredictiveSummary out;
  detail::prepare_summary(out, lik, ytest);
  const Eigen::Index nt = ytest.size();

  const CholeskyFactor& fac = prior.factor;
  const Eigen::MatrixXd A = fac.solve_lower(cross_cov(Xtest, Xtrain, cfg, fac.jitter()).transpose());
  const Eigen::MatrixXd W = fac.solve_upper(A);  // K^{-1} K_X*
  const double kss = cfg.variance + fac.jitter();
  Eigen::VectorXd cond_var(nt);
  for (Eigen::Index j = 0; j < nt; ++j) cond_var[j] = std::max(0.0, kss - A.col(j).squaredNorm());

  const HermiteRule& rule = gauss_hermite(order);
  Eigen::VectorXd log_w = rule.weights.array().log();
  std::vector<std::vector<double>> logp(static_cast<std::size_t>(nt));
  std::vector<std::vector<double>> pplus(static_cast<std::size_t>(nt));
  Eigen::VectorXd sum_mean = Eigen::VectorXd::Zero(nt), sum_sq = Eigen::VectorXd::Zero(nt);
  double count = 0.0;

  for (const auto& chain : store.f) {
    const Eigen::MatrixXd means = chain * W;  // samples x nt
    for (Eigen::Index s = 0; s < means.rows(); ++s) {
      for (Eigen::Index j = 0; j < nt; ++j) {
        const double mu = means(s, j);
        sum_mean[j] += mu;
        sum_sq[j] += mu * mu;
        const double sc = std::sqrt(2.0 * cond_var[j]);
        double top = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd terms(rule.nodes.size());
        double pp = 0.0;
        for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
          const double f = mu + sc * rule.nodes[k];
          const double lp = out.task == Support::binary ? detail::class_log_prob(lik, ytest[j], f)
                                                         : log_likelihood(lik, ytest[j], f);
          terms[k] = log_w[k] + lp;
          top = std::max(top, terms[k]);
          if (out.task == Support::binary) pp += rule.weights[k] * std::exp(detail::class_log_prob(lik, 1.0, f));
        }
        logp[j].push_back(top + std::log((terms.array() - top).exp().sum()));
        if (out.task == Support::binary) pplus[j].push_back(pp);
      }
      count += 1.0;
    }
  }

  out.latent_mean = sum_mean / count;
  out.latent_var = (sum_sq / count - out.latent_mean.cwiseAbs2()).cwiseMax(0.0) + cond_var;
  out.log_density.resize(nt);
  if (out.task == Support::binary) out.prob_plus.resize(nt);
  for (Eigen::Index j = 0; j < nt; ++j) {
    const double top = *std::max_element(logp[j].begin(), logp[j].end());
    double acc = 0.0;
    for (double v : logp[j]) acc += std::exp(v - top);
    out.log_density[j] = top + std::log(acc / count);
    if (out.task == Support::binary) {
      out.prob_plus[j] = std::accumulate(pplus[j].begin(), pplus[j].end(), 0.0) / count;
    }
  }
  detail::finish_summary(out, lik, ytest);
  return out;
}

}  // namespace autoconj
