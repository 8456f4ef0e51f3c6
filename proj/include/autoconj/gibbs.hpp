#pragma once

// Gibbs sampling on the augmented model, alternating the complete conditionals
//   f | omega, y ~ N(mu, Sigma),  Sigma = (diag(2 omega * gamma) + K^{-1})^{-1},
//                                 mu = Sigma (g + omega * beta + K^{-1} mu0)
//   omega_i | f_i, y_i ~ pi(omega_i | |h(f_i, y_i)|).

#include <chrono>
#include <cmath>
#include <exception>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/augmentation.hpp"
#include "autoconj/cavi.hpp"
#include "autoconj/errors.hpp"
#include "autoconj/gaussian.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

/// Draw f from its conditional given the auxiliaries.
template <SuperGaussian L>
Eigen::VectorXd sample_f_conditional(const Eigen::VectorXd& omega, const L& lik, const Eigen::VectorXd& y,
                                     const LatentPrior& prior, Rng& rng) {
  const auto [d, b] = site_terms(omega, lik, y);
  return gaussian_conditional(prior, d, b).sample(rng);
}

/// Tilt of the auxiliary conditional at (f_i, y_i).
template <SuperGaussian L>
double conditional_tilt(const L& lik, double y, double f) {
  return std::sqrt(std::max(0.0, lik.coefficients(y)(f)));
}

/// Draw omega_i ~ pi(. | |h(f_i, y_i)|) for every i. The uniforms are drawn up front in index
/// order, so the result does not depend on how the inversions are scheduled.
template <SuperGaussian L>
Eigen::VectorXd sample_omega_conditional(const Eigen::VectorXd& f, const L& lik, const Eigen::VectorXd& y, Rng& rng,
                                         const BromwichConfig& cfg = {}) {
  const Eigen::Index n = y.size();
  if (f.size() != n) throw DimensionError("omega conditional: f and y sizes differ");
  if (!f.allFinite()) throw DomainError("omega conditional: f has non-finite entries");
  Eigen::VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i) u[i] = uniform_open(rng);
  Eigen::VectorXd omega(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8) if (n > 64)
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      const TiltedFamily<L> fam(lik, conditional_tilt(lik, y[i], f[i]));
      omega[i] = tilted_quantile(fam, u[i], cfg);
    } catch (const std::exception& e) {
#pragma omp critical(autoconj_omega_failure)
      if (!failure) {
        std::ostringstream msg;
        msg << "omega draw failed at index " << i << " (y = " << y[i] << ", f = " << f[i] << "): " << e.what();
        failure = std::make_exception_ptr(SamplingError(msg.str()));
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  return omega;
}

/// Draw omega_i from the base law pi(. | 0).
template <SuperGaussian L>
Eigen::VectorXd sample_omega_base(const L& lik, Eigen::Index n, Rng& rng, const BromwichConfig& cfg = {}) {
  const TiltedFamily<L> fam(lik, 0.0);
  Eigen::VectorXd omega(n);
  for (Eigen::Index i = 0; i < n; ++i) omega[i] = tilted_quantile(fam, uniform_open(rng), cfg);
  return omega;
}

enum class SweepOrder {
  f_then_omega,  ///< omega^0 from the base law; each sweep draws f then omega
  omega_then_f,  ///< f^0 from the prior; each sweep draws omega then f
};

struct GibbsOptions {
  int sweeps = 11000;  ///< total sweeps per chain, burn-in included
  int chains = 1;
  int burn_in = 1000;
  int thin = 1;
  std::uint64_t seed = 0;
  BromwichConfig bromwich;
  SweepOrder order = SweepOrder::f_then_omega;
  bool store_omega = false;
  int threads = 0;  ///< 0: OpenMP default
  double omega_scale = 1.0;  ///< test fixture: multiplies every omega draw (1 = exact sampler)

  void validate() const {
    if (chains < 1) throw ConstraintError("chains must be >= 1");
    if (burn_in < 0) throw ConstraintError("burn-in must be >= 0");
    if (thin < 1) throw ConstraintError("thin must be >= 1");
    if (sweeps <= burn_in) throw ConstraintError("samples must exceed burn-in");
    if (threads < 0) throw ConstraintError("threads must be >= 0");
    if (!(omega_scale > 0.0)) throw ConstraintError("omega scale must be > 0");
    bromwich.validate();
  }
  int retained() const { return (sweeps - burn_in) / thin; }
};

struct ChainTimings {
  double f_seconds = 0.0;
  double omega_seconds = 0.0;
  double total_seconds = 0.0;
  long sweeps = 0;

  double seconds_per_sample() const { return sweeps > 0 ? total_seconds / static_cast<double>(sweeps) : 0.0; }
  double omega_fraction() const { return total_seconds > 0 ? omega_seconds / total_seconds : 0.0; }
};

struct ChainStore {
  std::vector<Eigen::MatrixXd> f;      ///< per chain: retained samples x n
  std::vector<Eigen::MatrixXd> omega;  ///< per chain, empty unless stored
  std::vector<std::uint64_t> seeds;
  std::vector<ChainTimings> timings;
  int burn_in = 0;
  int thin = 1;

  std::size_t chains() const { return f.size(); }
  Eigen::Index samples() const { return f.empty() ? 0 : f.front().rows(); }
  Eigen::Index dims() const { return f.empty() ? 0 : f.front().cols(); }
};

namespace detail {

template <SuperGaussian L>
void run_chain(const LatentPrior& prior, const Eigen::VectorXd& y, const L& lik, const GibbsOptions& opts,
               std::uint64_t seed, Eigen::MatrixXd& f_out, Eigen::MatrixXd& omega_out, ChainTimings& timing) {
  using clock = std::chrono::steady_clock;
  const Eigen::Index n = y.size();
  Rng rng(seed);
  const int keep = opts.retained();
  f_out.resize(keep, n);
  if (opts.store_omega) omega_out.resize(keep, n);

  Eigen::VectorXd f, omega;
  if (opts.order == SweepOrder::f_then_omega) {
    omega = sample_omega_base(lik, n, rng, opts.bromwich) * opts.omega_scale;
  } else {
    f = prior.mean + prior.factor.lower() * standard_normal_vector(n, rng);
  }

  auto draw_f = [&] {
    const auto t0 = clock::now();
    f = sample_f_conditional(omega, lik, y, prior, rng);
    timing.f_seconds += std::chrono::duration<double>(clock::now() - t0).count();
  };
  auto draw_omega = [&](int sweep) {
    const auto t0 = clock::now();
    try {
      omega = sample_omega_conditional(f, lik, y, rng, opts.bromwich);
    } catch (const SamplingError& e) {
      std::ostringstream msg;
      msg << e.what() << " [seed " << seed << ", sweep " << sweep << ", |f|_inf = " << f.lpNorm<Eigen::Infinity>()
          << ", omega range = (" << omega.minCoeff() << ", " << omega.maxCoeff() << ")]";
      throw SamplingError(msg.str());
    }
    if (opts.omega_scale != 1.0) omega *= opts.omega_scale;
    timing.omega_seconds += std::chrono::duration<double>(clock::now() - t0).count();
  };

  const auto start = clock::now();
  for (int sweep = 1; sweep <= opts.sweeps; ++sweep) {
    if (opts.order == SweepOrder::f_then_omega) {
      draw_f();
      draw_omega(sweep);
    } else {
      if (sweep == 1) omega = Eigen::VectorXd::Zero(n);
      draw_omega(sweep);
      draw_f();
    }
    const int past = sweep - opts.burn_in;
    if (past > 0 && past % opts.thin == 0) {
      const int row = past / opts.thin - 1;
      if (row < keep) {
        f_out.row(row) = f.transpose();
        if (opts.store_omega) omega_out.row(row) = omega.transpose();
      }
    }
  }
  timing.total_seconds = std::chrono::duration<double>(clock::now() - start).count();
  timing.sweeps = opts.sweeps;
}

}  // namespace detail

/// Independent chains; chain k uses seed child_seed(opts.seed, k).
template <SuperGaussian L>
ChainStore run_gibbs(const LatentPrior& prior, const Eigen::VectorXd& y, const L& lik, const GibbsOptions& opts) {
  opts.validate();
  if (y.size() < 1) throw DimensionError("run_gibbs needs at least one observation");
  if (prior.size() != y.size()) throw DimensionError("run_gibbs: prior size does not match targets");
  check_targets(lik, y);

  ChainStore store;
  store.burn_in = opts.burn_in;
  store.thin = opts.thin;
  const auto chains = static_cast<std::size_t>(opts.chains);
  store.f.resize(chains);
  store.omega.resize(chains);
  store.timings.resize(chains);
  for (std::size_t k = 0; k < chains; ++k) store.seeds.push_back(child_seed(opts.seed, k));

  std::exception_ptr failure;
  const int threads = opts.threads > 0 ? opts.threads : 0;
#pragma omp parallel for schedule(static, 1) num_threads(threads > 0 ? threads : opts.chains) if (opts.chains > 1)
  for (int k = 0; k < opts.chains; ++k) {
    try {
      detail::run_chain(prior, y, lik, opts, store.seeds[k], store.f[k], store.omega[k], store.timings[k]);
    } catch (...) {
#pragma omp critical(autoconj_chain_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (!opts.store_omega) store.omega.clear();
  return store;
}

template <SuperGaussian L>
ChainStore run_gibbs(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const L& lik, const KernelConfig& kernel,
                     const GibbsOptions& opts) {
  if (X.rows() != y.size()) throw DimensionError("run_gibbs: X rows do not match targets");
  kernel.validate(X.cols());
  return run_gibbs(LatentPrior::build(X, kernel), y, lik, opts);
}

}  // namespace autoconj
