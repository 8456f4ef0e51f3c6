#pragma once

// Sparse-GP stochastic variational inference with inducing points.
//
// q(u) = N(m, S) over the latent values at the inducing inputs Z. Internally the model also
// keeps the natural parameters of q(u) expressed in the coordinates v = L_Z^{-1} u:
//   P = L_Z^T S^{-1} L_Z,   h = L_Z^T S^{-1} m,
// which are linear images of (S^{-1}, S^{-1} m). Interpolating (P, h) is therefore the same as
// interpolating the natural parameters themselves, while all solves stay well conditioned.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/augmentation.hpp"
#include "autoconj/cavi.hpp"
#include "autoconj/errors.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

/// Marginals of q(f) at a set of inputs, with the projection used to compute them.
struct SparseMarginals {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd Phi;  ///< K_XZ L_Z^{-T}, one row per input
};

class SparseModel {
 public:
  Eigen::MatrixXd Z;
  KernelConfig kernel;
  CholeskyFactor factor;  ///< of K_Z + jitter I
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::VectorXd prior_mean;

  Eigen::Index size() const { return Z.rows(); }

  /// q(u) = p(u).
  static SparseModel from_prior(Eigen::MatrixXd Z, const KernelConfig& kernel,
                                std::optional<Eigen::VectorXd> prior_mean = std::nullopt) {
    if (Z.rows() < 1) throw DimensionError("sparse model needs at least one inducing input");
    kernel.validate(Z.cols());
    SparseModel model;
    model.Z = std::move(Z);
    model.kernel = kernel;
    model.prior_mean = prior_mean ? *prior_mean : Eigen::VectorXd::Zero(model.Z.rows());
    if (model.prior_mean.size() != model.Z.rows()) throw DimensionError("prior mean length does not match Z");
    model.factor = chol_jitter(gram(model.Z, kernel), kernel.jitter);
    model.mean = model.prior_mean;
    model.cov = model.factor.reconstruct();
    model.prec_w_ = Eigen::MatrixXd::Identity(model.size(), model.size());
    model.shift_w_ = model.factor.solve_lower(model.prior_mean);
    return model;
  }

  /// Replace q(u) by N(m, S).
  void set_moments(const Eigen::VectorXd& m, const Eigen::MatrixXd& S) {
    if (m.size() != size() || S.rows() != size() || S.cols() != size()) {
      throw DimensionError("set_moments: sizes do not match the inducing set");
    }
    const Eigen::MatrixXd Sw = factor.solve_lower(factor.solve_lower(S).transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (Sw + Sw.transpose()));
    if (llt.info() != Eigen::Success) throw NumericalError("set_moments: S is not positive definite");
    prec_w_ = llt.solve(Eigen::MatrixXd::Identity(size(), size()));
    prec_w_ = 0.5 * (prec_w_ + prec_w_.transpose()).eval();
    shift_w_ = prec_w_ * factor.solve_lower(m);
    mean = m;
    cov = S;
  }

  /// Recompute the K_Z factor for a new kernel while keeping q(u) fixed.
  void set_kernel(const KernelConfig& cfg) {
    cfg.validate(Z.cols());
    kernel = cfg;
    factor = chol_jitter(gram(Z, kernel), kernel.jitter);
    const Eigen::VectorXd m = mean;
    const Eigen::MatrixXd S = cov;
    set_moments(m, S);
  }

  const Eigen::MatrixXd& whitened_precision() const { return prec_w_; }
  const Eigen::VectorXd& whitened_shift() const { return shift_w_; }

  /// Set whitened natural parameters and refresh (m, S).
  void set_natural(Eigen::MatrixXd P, Eigen::VectorXd h) {
    P = 0.5 * (P + P.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success) throw NumericalError("sparse update produced a non-SPD precision");
    const Eigen::MatrixXd Sw = llt.solve(Eigen::MatrixXd::Identity(size(), size()));
    const Eigen::VectorXd mw = llt.solve(h);
    mean = factor.lower() * mw;
    Eigen::MatrixXd LS = factor.lower() * Sw;
    cov = factor.lower() * LS.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    prec_w_ = std::move(P);
    shift_w_ = std::move(h);
  }

  /// Whitened moments m_w = L^{-1} m and S_w = L^{-1} S L^{-T}.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> whitened_moments() const {
    Eigen::LLT<Eigen::MatrixXd> llt(prec_w_);
    return {llt.solve(shift_w_), llt.solve(Eigen::MatrixXd::Identity(size(), size()))};
  }

  /// Marginal q(f_i) = N(a_i m, k_ii - a_i K_Z a_i^T + a_i S a_i^T), a_i = K_iZ K_Z^{-1}.
  SparseMarginals marginals(const Eigen::MatrixXd& X) const {
    if (X.cols() != Z.cols()) throw DimensionError("inputs have a different column count than Z");
    SparseMarginals out;
    out.Phi = factor.solve_lower(cross_cov(X, Z, kernel, factor.jitter()).transpose()).transpose();
    const auto [mw, Sw] = whitened_moments();
    out.mean = out.Phi * mw;
    const double kii = kernel.variance + factor.jitter();
    const Eigen::MatrixXd PS = out.Phi * Sw;
    out.var.resize(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double residual = std::max(0.0, kii - out.Phi.row(i).squaredNorm());
      out.var[i] = std::max(0.0, residual + PS.row(i).dot(out.Phi.row(i)));
    }
    return out;
  }

  /// KL[q(u) || p(u)].
  double kl() const {
    Eigen::LLT<Eigen::MatrixXd> llt(prec_w_);
    const Eigen::MatrixXd Lp = llt.matrixL();
    const double logdet_prec = 2.0 * Lp.diagonal().array().log().sum();
    const Eigen::MatrixXd Sw = llt.solve(Eigen::MatrixXd::Identity(size(), size()));
    const Eigen::VectorXd diff = llt.solve(shift_w_) - factor.solve_lower(prior_mean);
    return 0.5 * (Sw.trace() + diff.squaredNorm() - static_cast<double>(size()) + logdet_prec);
  }

 private:
  Eigen::MatrixXd prec_w_;
  Eigen::VectorXd shift_w_;
};

/// Latent predictive mean and variance at new inputs.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_latent(const SparseModel& model,
                                                                  const Eigen::MatrixXd& Xstar) {
  SparseMarginals mg = model.marginals(Xstar);
  return {std::move(mg.mean), std::move(mg.var)};
}

/// k-means++ seeding followed by 10 Lloyd iterations.
inline Eigen::MatrixXd kmeanspp_inducing(const Eigen::MatrixXd& X, Eigen::Index M, Rng& rng, int lloyd_iters = 10) {
  const Eigen::Index n = X.rows();
  if (M < 1) throw ConstraintError("inducing count must be >= 1");
  if (M > n) {
    throw ConstraintError("inducing count " + std::to_string(M) + " exceeds the number of rows " + std::to_string(n));
  }
  std::vector<Eigen::Index> chosen;
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());

  auto pick_uniform_untaken = [&]() {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!taken[i]) free.push_back(i);
    return free[std::min<std::size_t>(free.size() - 1, static_cast<std::size_t>(uniform_open(rng) * free.size()))];
  };

  for (Eigen::Index k = 0; k < M; ++k) {
    Eigen::Index next = -1;
    const double total = k == 0 ? 0.0 : d2.sum();
    if (k == 0 || !(total > 0.0)) {
      next = pick_uniform_untaken();
    } else {
      const double target = uniform_open(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc >= target) {
          next = i;
          break;
        }
      }
      if (next < 0) next = pick_uniform_untaken();
    }
    chosen.push_back(next);
    taken[next] = 1;
    d2 = d2.cwiseMin((X.rowwise() - X.row(next)).rowwise().squaredNorm());
    d2[next] = 0.0;
  }

  Eigen::MatrixXd C(M, X.cols());
  for (Eigen::Index k = 0; k < M; ++k) C.row(k) = X.row(chosen[k]);

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < lloyd_iters; ++it) {
    const Eigen::VectorXd c2 = C.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = X * C.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < M; ++k) {
        const double d = c2[k] - 2.0 * cross(i, k);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      assign[i] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(M, X.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(M);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += X.row(i);
      counts[assign[i]] += 1.0;
    }
    for (Eigen::Index k = 0; k < M; ++k) {
      if (counts[k] > 0.0) C.row(k) = sums.row(k) / counts[k];
    }
  }
  return C;
}

/// Robbins-Monro schedule rho(t) = (t + tau)^(-kappa), t = 1, 2, ...
struct LearningRate {
  double tau = 1.0;
  double kappa = 0.51;
  std::optional<double> fixed;  ///< constant step instead of the schedule

  void validate() const {
    if (fixed) {
      if (!(*fixed >= 0.0 && *fixed <= 1.0)) throw ConstraintError("fixed learning rate must lie in [0, 1]");
      return;
    }
    if (!(tau >= 0.0)) throw ConstraintError("lr-tau must be >= 0");
    if (!(kappa > 0.5 && kappa <= 1.0)) throw ConstraintError("lr-kappa must lie in (0.5, 1]");
  }
  double operator()(long t) const { return fixed ? *fixed : std::pow(static_cast<double>(t) + tau, -kappa); }
};

struct AdamSettings {
  double step = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double fd_step = 1e-4;  ///< central-difference step in log space
};

struct SviProgress {
  int epoch = 0;
  double elbo = 0.0;
  double seconds = 0.0;
  const SparseModel* model = nullptr;
};

struct SviOptions {
  Eigen::Index batch = 100;
  Eigen::Index inducing = 200;
  std::optional<Eigen::MatrixXd> inducing_points;  ///< overrides k-means++ selection
  LearningRate lr;
  int epochs = 100;
  double tol = 0.0;  ///< > 0 enables early stopping on relative ELBO and mean change
  std::uint64_t seed = 0;
  bool hyperopt = false;
  AdamSettings adam;
  std::function<void(const SviProgress&)> observer;

  void validate() const {
    if (batch < 1) throw ConstraintError("batch size must be >= 1");
    if (inducing < 1) throw ConstraintError("inducing count must be >= 1");
    if (epochs < 1) throw ConstraintError("epochs must be >= 1");
    if (!(tol >= 0.0)) throw ConstraintError("tol must be >= 0");
    lr.validate();
  }
};

namespace detail {

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(idx[k]);
  return out;
}

inline Eigen::VectorXd entries_of(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = y[idx[k]];
  return out;
}

}  // namespace detail

/// Optimal local variables at the batch points under the current q(u).
template <SuperGaussian L>
AugmentedState sparse_local_update(const SparseModel& model, const Eigen::MatrixXd& Xb, const Eigen::VectorXd& yb,
                                   const L& lik) {
  const SparseMarginals mg = model.marginals(Xb);
  return local_update_moments(mg.mean, mg.var, lik, yb);
}

/// One natural-gradient step on a minibatch (Xb, yb) with its local variables aug:
/// targets P~ = I + scale Phi^T D Phi and h~ = L^{-1} mu0 + scale Phi^T b, then
/// (P, h) <- (1 - rho)(P, h) + rho (P~, h~).
template <SuperGaussian L>
void svi_step(SparseModel& model, const Eigen::MatrixXd& Xb, const Eigen::VectorXd& yb, const AugmentedState& aug,
              const L& lik, double rho, double scale) {
  if (Xb.rows() < 1) throw DimensionError("svi_step: empty batch");
  if (Xb.rows() != yb.size() || aug.omega_bar.size() != yb.size()) throw DimensionError("svi_step: batch size mismatch");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConstraintError("svi_step: rho must lie in [0, 1]");
  if (rho == 0.0) return;
  const Eigen::MatrixXd Phi =
      model.factor.solve_lower(cross_cov(Xb, model.Z, model.kernel, model.factor.jitter()).transpose()).transpose();
  const auto [d, b] = site_terms(aug.omega_bar, lik, yb);
  const Eigen::Index M = model.size();
  Eigen::MatrixXd P_target = Eigen::MatrixXd::Identity(M, M);
  const Eigen::MatrixXd DPhi = d.cwiseSqrt().asDiagonal() * Phi;
  P_target.selfadjointView<Eigen::Lower>().rankUpdate(DPhi.transpose(), scale);
  P_target.triangularView<Eigen::StrictlyUpper>() = P_target.transpose();
  const Eigen::VectorXd h_target = model.factor.solve_lower(model.prior_mean) + scale * (Phi.transpose() * b);
  if (rho == 1.0) {
    model.set_natural(std::move(P_target), h_target);
  } else {
    model.set_natural((1.0 - rho) * model.whitened_precision() + rho * P_target,
                      (1.0 - rho) * model.whitened_shift() + rho * h_target);
  }
}

/// Sparse ELBO with the optimal local variables at every training point:
/// sum_i E_q[log p(y_i | f_i, omega_i)] - KL[q(omega_i)] - KL[q(u) || p(u)].
template <SuperGaussian L>
double sparse_elbo(const SparseModel& model, const L& lik, const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  if (X.rows() != y.size()) throw DimensionError("sparse_elbo: X rows do not match targets");
  const SparseMarginals mg = model.marginals(X);
  const AugmentedState aug = local_update_moments(mg.mean, mg.var, lik, y);
  const double kl = model.kl();
  if (!std::isfinite(kl)) throw NumericalError("non-finite KL[q(u) || p(u)]");
  return expected_local_terms(mg.mean, mg.var, aug, lik, y) - kl;
}

/// Log-space kernel parameters: [log variance, log lengthscale_1, ...].
inline Eigen::VectorXd kernel_log_params(const KernelConfig& cfg) {
  Eigen::VectorXd theta(1 + cfg.lengthscales.size());
  theta[0] = std::log(cfg.variance);
  theta.tail(cfg.lengthscales.size()) = cfg.lengthscales.array().log();
  return theta;
}

inline KernelConfig kernel_from_log_params(const KernelConfig& base, const Eigen::VectorXd& theta) {
  KernelConfig cfg = base;
  cfg.variance = std::exp(theta[0]);
  cfg.lengthscales = theta.tail(theta.size() - 1).array().exp();
  return cfg;
}

/// Finite-difference gradient of the sparse ELBO in the log kernel parameters, with q(u)
/// held fixed. order 2 is the central stencil, order 4 the five-point stencil.
template <SuperGaussian L>
Eigen::VectorXd sparse_elbo_gradient(const SparseModel& model, const L& lik, const Eigen::VectorXd& y,
                                     const Eigen::MatrixXd& X, double h = 1e-4, int order = 2) {
  if (order != 2 && order != 4) throw ConstraintError("finite-difference order must be 2 or 4");
  const Eigen::VectorXd theta = kernel_log_params(model.kernel);
  auto value_at = [&](const Eigen::VectorXd& t) {
    SparseModel trial = model;
    trial.set_kernel(kernel_from_log_params(model.kernel, t));
    return sparse_elbo(trial, lik, y, X);
  };
  Eigen::VectorXd grad(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    auto shifted = [&](double delta) {
      Eigen::VectorXd t = theta;
      t[k] += delta;
      return value_at(t);
    };
    if (order == 2) {
      grad[k] = (shifted(h) - shifted(-h)) / (2.0 * h);
    } else {
      grad[k] = (-shifted(2 * h) + 8.0 * shifted(h) - 8.0 * shifted(-h) + shifted(-2 * h)) / (12.0 * h);
    }
  }
  return grad;
}

struct SviFit {
  SparseModel model;
  FitTrace trace;
};

/// Epochs of shuffled minibatches; the full-data sparse ELBO is recorded after each epoch.
template <SuperGaussian L>
SviFit fit_svi(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const L& lik, const KernelConfig& kernel,
               const SviOptions& opts = {}) {
  opts.validate();
  const Eigen::Index n = y.size();
  if (n < 1) throw DimensionError("fit_svi needs at least one observation");
  if (X.rows() != n) throw DimensionError("fit_svi: X rows do not match targets");
  kernel.validate(X.cols());
  check_targets(lik, y);
  if (opts.batch > n) throw ConstraintError("batch size exceeds the number of observations");

  Rng rng(opts.seed);
  Eigen::MatrixXd Z;
  if (opts.inducing_points) {
    Z = *opts.inducing_points;
    if (Z.cols() != X.cols()) throw DimensionError("inducing points have the wrong column count");
  } else {
    Rng init_rng(child_seed(opts.seed, 1));
    Z = kmeanspp_inducing(X, opts.inducing, init_rng);
  }

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  double observer_seconds = 0.0;
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count() - observer_seconds; };

  SviFit fit{SparseModel::from_prior(std::move(Z), kernel), {}};
  double current = sparse_elbo(fit.model, lik, y, X);
  auto record = [&](int epoch, double delta) {
    fit.trace.entries.push_back({epoch, current, delta, elapsed()});
    if (opts.observer) {
      const auto t0 = clock::now();
      opts.observer(SviProgress{epoch, current, fit.trace.entries.back().seconds, &fit.model});
      observer_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    }
  };
  record(0, 0.0);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::VectorXd theta0 = kernel_log_params(kernel);
  Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(theta0.size());
  Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(theta0.size());
  const double scale = static_cast<double>(n) / static_cast<double>(opts.batch);
  long step = 0;

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const Eigen::VectorXd before = fit.model.mean;
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index startb = 0; startb + opts.batch <= n; startb += opts.batch) {
      const std::vector<Eigen::Index> idx(order.begin() + startb, order.begin() + startb + opts.batch);
      const Eigen::MatrixXd Xb = detail::rows_of(X, idx);
      const Eigen::VectorXd yb = detail::entries_of(y, idx);
      const AugmentedState aug = sparse_local_update(fit.model, Xb, yb, lik);
      svi_step(fit.model, Xb, yb, aug, lik, opts.lr(++step), scale);
    }
    if (opts.hyperopt) {
      const Eigen::VectorXd grad = sparse_elbo_gradient(fit.model, lik, y, X, opts.adam.fd_step, 2);
      adam_m = opts.adam.beta1 * adam_m + (1.0 - opts.adam.beta1) * grad;
      adam_v = opts.adam.beta2 * adam_v + (1.0 - opts.adam.beta2) * grad.cwiseAbs2();
      const Eigen::VectorXd mhat = adam_m / (1.0 - std::pow(opts.adam.beta1, epoch));
      const Eigen::VectorXd vhat = adam_v / (1.0 - std::pow(opts.adam.beta2, epoch));
      const Eigen::VectorXd theta = kernel_log_params(fit.model.kernel) +
                                    opts.adam.step * (mhat.array() / (vhat.array().sqrt() + opts.adam.eps)).matrix();
      fit.model.set_kernel(kernel_from_log_params(fit.model.kernel, theta));
    }
    const double previous = current;
    current = sparse_elbo(fit.model, lik, y, X);
    const double delta = (fit.model.mean - before).lpNorm<Eigen::Infinity>();
    record(epoch, delta);
    if (opts.tol > 0.0 && std::abs(current - previous) < opts.tol * std::max(1.0, std::abs(current)) &&
        delta < opts.tol) {
      fit.trace.converged = true;
      break;
    }
  }
  if (opts.tol == 0.0) fit.trace.converged = true;
  return fit;
}

}  // namespace autoconj
