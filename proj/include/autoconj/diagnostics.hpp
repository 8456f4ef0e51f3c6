#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"
#include "autoconj/gaussian.hpp"
#include "autoconj/gibbs.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

/// Biased sample autocorrelation for lags 0..max_lag; entry 0 is 1.
inline Eigen::VectorXd autocorr(const Eigen::VectorXd& trace, Eigen::Index max_lag) {
  const Eigen::Index n = trace.size();
  if (max_lag < 0) throw ConstraintError("max_lag must be >= 0");
  if (n <= max_lag + 1) {
    throw DimensionError("trace of length " + std::to_string(n) + " is too short for max_lag " +
                         std::to_string(max_lag));
  }
  const Eigen::VectorXd x = trace.array() - trace.mean();
  const double c0 = x.squaredNorm() / static_cast<double>(n);
  if (!(c0 > 0.0) || !std::isfinite(c0)) throw NumericalError("autocorrelation undefined: trace has zero variance");
  Eigen::VectorXd rho(max_lag + 1);
  rho[0] = 1.0;
  for (Eigen::Index k = 1; k <= max_lag; ++k) {
    rho[k] = x.head(n - k).dot(x.tail(n - k)) / static_cast<double>(n) / c0;
  }
  return rho;
}

namespace detail {

/// Integrated autocorrelation time with Geyer's initial positive sequence. Returns the
/// time and whether a non-positive pair was reached inside rho.
inline std::pair<double, bool> geyer_tau(const Eigen::VectorXd& rho) {
  double sum = 0.0;
  for (Eigen::Index m = 0; 2 * m + 1 < rho.size(); ++m) {
    const double pair = rho[2 * m] + rho[2 * m + 1];
    if (!(pair > 0.0)) return {-1.0 + 2.0 * sum, true};
    sum += pair;
  }
  return {-1.0 + 2.0 * sum, false};
}

}  // namespace detail

/// N / tau from a precomputed autocorrelation vector, clamped to [1, N].
inline double ess_from_autocorr(const Eigen::VectorXd& rho, Eigen::Index n) {
  const double N = static_cast<double>(n);
  const double tau = detail::geyer_tau(rho).first;
  const double value = tau > 0.0 ? N / tau : N;
  return std::clamp(value, 1.0, N);
}

/// Effective sample size. The lag window grows until the initial positive sequence ends.
inline double ess(const Eigen::VectorXd& trace) {
  const Eigen::Index n = trace.size();
  if (n < 10) throw DimensionError("ESS needs a trace of length >= 10");
  Eigen::Index window = std::min<Eigen::Index>(64, n - 2);
  while (true) {
    const Eigen::VectorXd rho = autocorr(trace, window);
    if (detail::geyer_tau(rho).second || window >= n - 2) return ess_from_autocorr(rho, n);
    window = std::min<Eigen::Index>(2 * window, n - 2);
  }
}

/// Split potential scale reduction factor: every chain is halved (the middle draw of an odd
/// length chain is dropped) before the between/within variance comparison.
inline double gelman_rubin(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) throw ConstraintError("Gelman-Rubin needs at least 2 chains");
  const Eigen::Index len = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != len) throw DimensionError("Gelman-Rubin chains must have equal length");
  }
  if (len < 10) throw DimensionError("Gelman-Rubin chains must have length >= 10");
  const Eigen::Index half = len / 2;
  std::vector<Eigen::VectorXd> parts;
  for (const auto& c : chains) {
    parts.push_back(c.head(half));
    parts.push_back(c.tail(half));
  }
  const double m = static_cast<double>(parts.size());
  const double L = static_cast<double>(half);
  Eigen::VectorXd means(parts.size());
  double W = 0.0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    means[j] = parts[j].mean();
    W += (parts[j].array() - means[j]).square().sum() / (L - 1.0);
  }
  W /= m;
  const double B_over_L = (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(W > 0.0)) throw NumericalError("Gelman-Rubin undefined: zero within-chain variance");
  const double var_plus = (L - 1.0) / L * W + B_over_L;
  return std::sqrt(var_plus / W);
}

struct MonitoredScalar {
  std::string name;
  std::vector<Eigen::VectorXd> traces;  ///< one per chain
};

/// Mean of f across datapoints plus up to three seeded coordinates.
inline std::vector<MonitoredScalar> monitored_scalars(const ChainStore& store, std::uint64_t seed = 0) {
  if (store.chains() == 0 || store.samples() == 0) throw DimensionError("empty chain store");
  const Eigen::Index n = store.dims();
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(n));
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min<std::size_t>(3, coords.size()));
  std::sort(coords.begin(), coords.end());

  std::vector<MonitoredScalar> out;
  MonitoredScalar mean{"mean_f", {}};
  for (const auto& chain : store.f) mean.traces.push_back(chain.rowwise().mean());
  out.push_back(std::move(mean));
  for (Eigen::Index c : coords) {
    MonitoredScalar s{"f_" + std::to_string(c + 1), {}};
    for (const auto& chain : store.f) s.traces.push_back(chain.col(c));
    out.push_back(std::move(s));
  }
  return out;
}

struct ScalarDiagnostics {
  std::string name;
  Eigen::VectorXd autocorr;  ///< chain-averaged, lags 0..max_lag
  double rhat = std::numeric_limits<double>::quiet_NaN();  ///< NaN with a single chain
  double ess = 0.0;  ///< summed over chains
};

struct DiagnosticsReport {
  std::vector<ScalarDiagnostics> scalars;
  double worst_lag1 = 0.0;
  double worst_rhat = std::numeric_limits<double>::quiet_NaN();
  double min_ess = 0.0;
  double seconds_per_sample = 0.0;
  std::vector<double> geweke_z;
};

inline DiagnosticsReport diagnose(const std::vector<MonitoredScalar>& scalars, Eigen::Index max_lag) {
  DiagnosticsReport rep;
  rep.min_ess = std::numeric_limits<double>::infinity();
  rep.worst_lag1 = max_lag >= 1 ? -1.0 : 0.0;
  bool any_rhat = false;
  for (const auto& s : scalars) {
    ScalarDiagnostics d;
    d.name = s.name;
    d.autocorr = Eigen::VectorXd::Zero(max_lag + 1);
    for (const auto& t : s.traces) {
      d.autocorr += autocorr(t, max_lag);
      d.ess += ess(t);
    }
    d.autocorr /= static_cast<double>(s.traces.size());
    if (s.traces.size() >= 2) {
      d.rhat = gelman_rubin(s.traces);
      rep.worst_rhat = any_rhat ? std::max(rep.worst_rhat, d.rhat) : d.rhat;
      any_rhat = true;
    }
    if (max_lag >= 1) rep.worst_lag1 = std::max(rep.worst_lag1, d.autocorr[1]);
    rep.min_ess = std::min(rep.min_ess, d.ess);
    rep.scalars.push_back(std::move(d));
  }
  return rep;
}

inline DiagnosticsReport diagnose(const ChainStore& store, Eigen::Index max_lag = 20, std::uint64_t seed = 0) {
  DiagnosticsReport rep = diagnose(monitored_scalars(store, seed), max_lag);
  double total = 0.0;
  long sweeps = 0;
  for (const auto& t : store.timings) {
    total += t.total_seconds;
    sweeps += t.sweeps;
  }
  rep.seconds_per_sample = sweeps > 0 ? total / static_cast<double>(sweeps) : 0.0;
  return rep;
}

struct GewekeOptions {
  Eigen::Index n = 10;
  int draws = 10000;
  std::uint64_t seed = 0;
  KernelConfig kernel;
  BromwichConfig bromwich;
  double omega_scale = 1.0;  ///< test fixture for the successive-conditional sampler
};

struct GewekeResult {
  std::array<std::string, 3> names{"mean_f", "mean_f2", "mean_omega"};
  Eigen::Vector3d forward_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d conditional_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d z = Eigen::Vector3d::Zero();
};

namespace detail {

inline Eigen::Vector3d geweke_stats(const Eigen::VectorXd& f, const Eigen::VectorXd& omega) {
  return {f.mean(), f.squaredNorm() / static_cast<double>(f.size()), omega.mean()};
}

/// y | f, omega under the augmented joint.
template <SuperGaussian L>
Eigen::VectorXd sample_target_augmented(const L& lik, const Eigen::VectorXd& f, const Eigen::VectorXd& omega,
                                        Rng& rng) {
  Eigen::VectorXd y(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (lik.support() == Support::regression) {
      // h^2 = gamma (y - f)^2 for every regression family, so y is Gaussian around f.
      const double gamma = lik.coefficients(0.0).gamma;
      y[i] = f[i] + standard_normal(rng) / std::sqrt(2.0 * gamma * omega[i]);
    } else {
      auto logw = [&](double label) {
        return lik.g(label) * f[i] - omega[i] * lik.coefficients(label)(f[i]);
      };
      const double lp = logw(1.0), lm = logw(-1.0);
      const double p_plus = 1.0 / (1.0 + std::exp(lm - lp));
      y[i] = uniform_open(rng) < p_plus ? 1.0 : -1.0;
    }
  }
  return y;
}

}  // namespace detail

/// Joint-distribution test: statistics of forward draws (f, y, omega) from the augmented
/// joint against those of a successive-conditional chain that also resamples y.
template <SuperGaussian L>
GewekeResult geweke_joint_test(const L& lik, const GewekeOptions& opts = {}) {
  if (opts.draws < 1000) throw ConstraintError("Geweke test needs at least 1000 draws");
  if (opts.n < 1) throw ConstraintError("Geweke test needs n >= 1");
  if constexpr (std::is_same_v<L, Likelihood>) {
    if (lik.family() == Family::bayesian_svm) {
      throw ConstraintError("Geweke test needs a likelihood normalized over y; bayesian-svm is not");
    }
  }
  Eigen::MatrixXd X(opts.n, 1);
  for (Eigen::Index i = 0; i < opts.n; ++i) {
    X(i, 0) = opts.n == 1 ? 0.0 : -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(opts.n - 1);
  }
  const LatentPrior prior = LatentPrior::build(X, opts.kernel);
  auto prior_draw = [&](Rng& rng) { return Eigen::VectorXd(prior.factor.lower() * standard_normal_vector(opts.n, rng)); };
  auto omega_draw = [&](const Eigen::VectorXd& f, const Eigen::VectorXd& y, Rng& rng) {
    return sample_omega_conditional(f, lik, y, rng, opts.bromwich);
  };

  const int N = opts.draws;
  Eigen::MatrixXd fwd(N, 3), sc(N, 3);
  Rng rng_fwd(child_seed(opts.seed, 0));
  for (int t = 0; t < N; ++t) {
    const Eigen::VectorXd f = prior_draw(rng_fwd);
    Eigen::VectorXd y(opts.n);
    for (Eigen::Index i = 0; i < opts.n; ++i) y[i] = lik.sample_target(f[i], rng_fwd);
    fwd.row(t) = detail::geweke_stats(f, omega_draw(f, y, rng_fwd)).transpose();
  }

  Rng rng(child_seed(opts.seed, 1));
  Eigen::VectorXd f = prior_draw(rng);
  Eigen::VectorXd y(opts.n);
  for (Eigen::Index i = 0; i < opts.n; ++i) y[i] = lik.sample_target(f[i], rng);
  Eigen::VectorXd omega = omega_draw(f, y, rng);
  for (int t = 0; t < N; ++t) {
    f = sample_f_conditional(omega, lik, y, prior, rng);
    omega = omega_draw(f, y, rng) * opts.omega_scale;
    y = detail::sample_target_augmented(lik, f, omega, rng);
    sc.row(t) = detail::geweke_stats(f, omega).transpose();
  }

  GewekeResult res;
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd a = fwd.col(k), b = sc.col(k);
    res.forward_mean[k] = a.mean();
    res.conditional_mean[k] = b.mean();
    const double va = (a.array() - a.mean()).square().sum() / (N - 1.0);
    const double vb = (b.array() - b.mean()).square().sum() / (N - 1.0);
    const double se2 = va / N + vb / ess(b);
    res.z[k] = (res.forward_mean[k] - res.conditional_mean[k]) / std::sqrt(se2);
  }
  return res;
}

}  // namespace autoconj
