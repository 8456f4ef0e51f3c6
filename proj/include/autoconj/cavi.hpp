#pragma once

// Full-GP augmented variational inference. The mean-field family q(f) prod_i q(omega_i)
// with q(f) = N(m, S) and q(omega_i) = pi(omega_i | c_i) is fitted by coordinate ascent:
//   local:  c_i^2 = E_q[|h(f_i, y_i)|^2],  omega_bar_i = -phi'(c_i^2) / phi(c_i^2)
//   global: S = (diag(2 omega_bar * gamma) + K^{-1})^{-1},  m = S (K^{-1} mu0 + g + omega_bar * beta)

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/augmentation.hpp"
#include "autoconj/errors.hpp"
#include "autoconj/gaussian.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/quadrature.hpp"

namespace autoconj {

/// Per-datapoint tilts c_i and auxiliary means omega_bar_i.
struct AugmentedState {
  Eigen::VectorXd c;
  Eigen::VectorXd omega_bar;
  Eigen::Index clamped = 0;  ///< number of tilts raised to the singularity guard
};

struct FitTrace {
  struct Entry {
    int iteration = 0;
    double elbo = 0.0;
    double delta = 0.0;  ///< max-norm change of the variational mean
    double seconds = 0.0;
    double gap = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<Entry> entries;
  bool converged = false;
};

template <SuperGaussian L>
void check_targets(const L& lik, const Eigen::VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) lik.check_target(y[i]);
}

/// Local update from marginal means and variances of q(f_i).
template <SuperGaussian L>
AugmentedState local_update_moments(const Eigen::VectorXd& mean, const Eigen::VectorXd& var, const L& lik,
                                    const Eigen::VectorXd& y) {
  const Eigen::Index n = y.size();
  if (mean.size() != n || var.size() != n) throw DimensionError("local update: size mismatch");
  AugmentedState aug;
  aug.c.resize(n);
  aug.omega_bar.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double c2 = lik.coefficients(y[i]).expectation(mean[i], var[i]);
    if (c2 < 0.0) {
      if (c2 < -1e-8) {
        std::ostringstream msg;
        msg << "negative E[h^2] = " << c2 << " at index " << i << " (corrupted posterior)";
        throw NumericalError(msg.str());
      }
      c2 = 0.0;
    }
    aug.c[i] = std::sqrt(c2);
    const TiltedFamily<L> fam(lik, aug.c[i]);
    aug.omega_bar[i] = mean_omega(fam);
    aug.clamped += fam.clamped() ? 1 : 0;
  }
  return aug;
}

template <SuperGaussian L>
AugmentedState local_update(const GaussianPosterior& q, const L& lik, const Eigen::VectorXd& y) {
  return local_update_moments(q.mean, Eigen::VectorXd(q.cov.diagonal()), lik, y);
}

/// Site precisions d = 2 omega * gamma and shifts b = g + omega * beta for given auxiliaries.
template <SuperGaussian L>
std::pair<Eigen::VectorXd, Eigen::VectorXd> site_terms(const Eigen::VectorXd& omega, const L& lik,
                                                       const Eigen::VectorXd& y) {
  const Eigen::Index n = y.size();
  if (omega.size() != n) throw DimensionError("site terms: size mismatch");
  Eigen::VectorXd d(n), b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const QuadraticForm h = lik.coefficients(y[i]);
    d[i] = 2.0 * omega[i] * h.gamma;
    b[i] = lik.g(y[i]) + omega[i] * h.beta;
  }
  return {d, b};
}

template <SuperGaussian L>
GaussianPosterior global_update(const AugmentedState& aug, const L& lik, const Eigen::VectorXd& y,
                                const LatentPrior& prior) {
  const auto [d, b] = site_terms(aug.omega_bar, lik, y);
  return gaussian_conditional(prior, d, b);
}

/// sum_i E_q[log p(y_i | f_i, omega_i)] - sum_i KL[q(omega_i) || p(omega_i)], given the
/// marginal moments of q(f_i).
template <SuperGaussian L>
double expected_local_terms(const Eigen::VectorXd& mean, const Eigen::VectorXd& var, const AugmentedState& aug,
                            const L& lik, const Eigen::VectorXd& y) {
  double total = 0.0;
  const double log_c = lik.log_norm_const();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const QuadraticForm h = lik.coefficients(y[i]);
    const TiltedFamily<L> fam(lik, aug.c[i]);
    const double term = log_c + lik.g(y[i]) * mean[i] - h.expectation(mean[i], var[i]) * aug.omega_bar[i] -
                        (-fam.c2() * aug.omega_bar[i] - fam.log_phi_c2());
    if (!std::isfinite(term)) {
      std::ostringstream msg;
      msg << "non-finite ELBO term at index " << i << " (c = " << aug.c[i] << ", omega_bar = " << aug.omega_bar[i]
          << ")";
      throw NumericalError(msg.str());
    }
    total += term;
  }
  return total;
}

/// Augmented-model evidence lower bound.
template <SuperGaussian L>
double elbo(const GaussianPosterior& q, const AugmentedState& aug, const L& lik, const Eigen::VectorXd& y,
            const LatentPrior& prior) {
  const double local = expected_local_terms(q.mean, Eigen::VectorXd(q.cov.diagonal()), aug, lik, y);
  const double kl = kl_gaussian(prior, q);
  if (!std::isfinite(kl)) throw NumericalError("non-finite KL[q(f) || p(f)]");
  return local - kl;
}

/// sum_i E_{N(mean_i, var_i)}[log phi(h_i^2)] - log phi(c_i^2). Nonnegative when c_i^2 = E[h_i^2].
template <SuperGaussian L>
double augmentation_gap_moments(const Eigen::VectorXd& mean, const Eigen::VectorXd& var, const AugmentedState& aug,
                                const L& lik, const Eigen::VectorXd& y) {
  double gap = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const QuadraticForm h = lik.coefficients(y[i]);
    const double expected = gh_expect_adaptive(mean[i], std::max(0.0, var[i]),
                                               [&](double f) { return lik.log_phi(std::max(0.0, h(f))); });
    gap += expected - lik.log_phi(aug.c[i] * aug.c[i]);
  }
  return gap;
}

template <SuperGaussian L>
double augmentation_gap(const GaussianPosterior& q, const AugmentedState& aug, const L& lik,
                        const Eigen::VectorXd& y) {
  return augmentation_gap_moments(q.mean, Eigen::VectorXd(q.cov.diagonal()), aug, lik, y);
}

struct CaviProgress {
  int iteration = 0;
  double elbo = 0.0;
  double seconds = 0.0;
  const GaussianPosterior* posterior = nullptr;
};

struct CaviOptions {
  int max_iter = 200;
  double tol = 1e-6;  ///< relative ELBO change and max-norm mean change
  std::uint64_t seed = 0;  ///< unused by the deterministic updates; kept for run manifests
  bool record_gap = false;
  std::function<void(const CaviProgress&)> observer;

  void validate() const {
    if (max_iter < 1) throw ConstraintError("max_iter must be >= 1");
    if (!(tol > 0.0)) throw ConstraintError("tol must be > 0");
  }
};

struct CaviFit {
  LatentPrior prior;
  GaussianPosterior q;
  AugmentedState aug;
  FitTrace trace;
};

/// Algorithm: start at q(f) = p(f), then alternate local and global updates.
template <SuperGaussian L>
CaviFit fit_cavi(LatentPrior prior, const Eigen::VectorXd& y, const L& lik, const CaviOptions& opts = {}) {
  opts.validate();
  if (y.size() < 1) throw DimensionError("fit_cavi needs at least one observation");
  if (prior.size() != y.size()) throw DimensionError("fit_cavi: prior size does not match targets");
  check_targets(lik, y);

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  double observer_seconds = 0.0;
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count() - observer_seconds; };

  CaviFit fit;
  fit.q = GaussianPosterior::from_prior(prior);
  fit.aug = local_update(fit.q, lik, y);
  double current = elbo(fit.q, fit.aug, lik, y, prior);
  auto record = [&](int it, double delta) {
    FitTrace::Entry e{it, current, delta, elapsed()};
    if (opts.record_gap) e.gap = augmentation_gap(fit.q, fit.aug, lik, y);
    fit.trace.entries.push_back(e);
    if (opts.observer) {
      const auto t0 = clock::now();
      opts.observer(CaviProgress{it, current, e.seconds, &fit.q});
      observer_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    }
  };
  record(0, 0.0);

  for (int it = 1; it <= opts.max_iter; ++it) {
    GaussianPosterior next = global_update(fit.aug, lik, y, prior);
    const double delta = (next.mean - fit.q.mean).lpNorm<Eigen::Infinity>();
    fit.q = std::move(next);
    fit.aug = local_update(fit.q, lik, y);
    const double previous = current;
    current = elbo(fit.q, fit.aug, lik, y, prior);
    record(it, delta);
    if (std::abs(current - previous) < opts.tol * std::max(1.0, std::abs(current)) && delta < opts.tol) {
      fit.trace.converged = true;
      break;
    }
  }
  fit.prior = std::move(prior);
  return fit;
}

template <SuperGaussian L>
CaviFit fit_cavi(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const L& lik, const KernelConfig& kernel,
                 const CaviOptions& opts = {}) {
  if (X.rows() != y.size()) throw DimensionError("fit_cavi: X rows do not match targets");
  kernel.validate(X.cols());
  return fit_cavi(LatentPrior::build(X, kernel), y, lik, opts);
}

}  // namespace autoconj
