#pragma once

// The tilted auxiliary family pi(omega | c) = exp(-c^2 omega) pi(omega | 0) / phi(c^2), where
// pi(. | 0) is the inverse Laplace transform of phi. Moments come from derivatives of log phi;
// the density and CDF are evaluated pointwise by numerical inversion (Abate-Whitt trapezoid
// rule with Euler summation) and samples by inverting the CDF with a safeguarded Newton
// iteration.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <vector>

#include "autoconj/errors.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

/// Lower bound applied to c^2 for families whose phi' diverges at the origin.
inline constexpr double kTiltGuard = 1e-10;

struct BromwichConfig {
  int terms = 64;         ///< total number of series terms
  int euler_depth = 15;   ///< binomial averaging depth over the last partial sums
  double A = 18.4;        ///< discretization parameter, error ~ exp(-A)
  double newton_tol = 1e-8;
  int newton_max_iter = 100;

  void validate() const {
    if (euler_depth < 0 || terms < euler_depth + 1) {
      throw ConstraintError("Bromwich config needs terms >= euler_depth + 1");
    }
    if (!(A > 0.0)) throw ConstraintError("Bromwich parameter A must be > 0");
    if (!(newton_tol > 0.0)) throw ConstraintError("newton tolerance must be > 0");
    if (newton_max_iter < 1) throw ConstraintError("newton max iterations must be >= 1");
  }
};

template <SuperGaussian L>
class TiltedFamily {
 public:
  TiltedFamily(const L& lik, double c) : lik_(&lik) {
    if (!std::isfinite(c)) throw DomainError("tilt parameter c must be finite");
    c2_ = c * c;
    if (lik.singular_at_origin() && c2_ < kTiltGuard) {
      c2_ = kTiltGuard;
      clamped_ = true;
    }
    log_phi_c2_ = lik.log_phi(c2_);
  }

  static TiltedFamily from_c2(const L& lik, double c2) { return TiltedFamily(lik, std::sqrt(std::max(0.0, c2))); }

  const L& likelihood() const { return *lik_; }
  /// Effective c^2 after the singularity guard.
  double c2() const { return c2_; }
  bool clamped() const { return clamped_; }
  double log_phi_c2() const { return log_phi_c2_; }

 private:
  const L* lik_;
  double c2_ = 0.0;
  double log_phi_c2_ = 0.0;
  bool clamped_ = false;
};

/// First moment: -phi'(c^2) / phi(c^2).
template <SuperGaussian L>
double mean_omega(const TiltedFamily<L>& fam) {
  return -fam.likelihood().dlog_phi(fam.c2());
}

/// KL[pi(. | c) || pi(. | 0)] = -c^2 E[omega] - log phi(c^2).
template <SuperGaussian L>
double kl_omega(const TiltedFamily<L>& fam) {
  return -fam.c2() * mean_omega(fam) - fam.log_phi_c2();
}

/// Cumulants (-1)^k d^k log phi / dt^k at t = c^2, for k in {1, 2}.
template <SuperGaussian L>
double cumulant(const TiltedFamily<L>& fam, int k) {
  if (k == 1) return mean_omega(fam);
  if (k == 2) {
    const double v = fam.likelihood().d2log_phi(fam.c2());
    if (std::isfinite(v)) return v;
    // The variance diverges at the origin for every sqrt(r)-type phi.
    return fam.likelihood().d2log_phi(std::max(fam.c2(), kTiltGuard));
  }
  throw ConstraintError("cumulant order must be 1 or 2, got " + std::to_string(k));
}

struct TransformValues {
  double cdf = 0.0;
  double pdf = 0.0;
};

namespace detail {

inline const std::vector<double>& euler_weights(int depth) {
  thread_local std::vector<double> weights;
  thread_local int cached = -1;
  if (cached != depth) {
    weights.assign(depth + 1, 0.0);
    double c = 1.0;
    for (int j = 0; j <= depth; ++j) {
      weights[j] = c * std::ldexp(1.0, -depth);
      c = c * (depth - j) / (j + 1);
    }
    cached = depth;
  }
  return weights;
}

/// Standard normal quantile (Acklam's rational approximation, relative error ~1e-9).
inline double normal_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549671405455543e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) return -normal_quantile(1.0 - p);
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

/// Newton start: Wilson-Hilferty quantile of the Gamma law matching the first two
/// cumulants, falling back to the mean when the match is poor (shape < 0.5).
template <SuperGaussian L>
double quantile_start(const TiltedFamily<L>& fam, double u) {
  const double mean = -fam.likelihood().dlog_phi(fam.c2());
  if (!(mean > 0.0) || !std::isfinite(mean)) return 1.0;
  const double var = fam.likelihood().d2log_phi(std::max(fam.c2(), kTiltGuard));
  if (!(var > 0.0) || !std::isfinite(var)) return mean;
  const double shape = mean * mean / var;
  if (shape < 0.5) return mean;
  const double t = 1.0 - 1.0 / (9.0 * shape) + normal_quantile(u) / (3.0 * std::sqrt(shape));
  if (!(t > 0.0)) return mean;
  return mean * t * t * t;
}

}  // namespace detail

/// CDF and density of pi(. | c) at x > 0. Both come from the same set of transform
/// evaluations phi(s_k + c^2) / phi(c^2) on the Bromwich contour s_k = (A + 2 pi i k) / (2x).
template <SuperGaussian L>
TransformValues tilted_cdf_pdf(const TiltedFamily<L>& fam, double x, const BromwichConfig& cfg = {}) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("tilted transform needs x > 0");
  const L& lik = fam.likelihood();
  const double c2 = fam.c2();
  const double inv_phi_c2 = std::exp(-fam.log_phi_c2());
  const double a = cfg.A / (2.0 * x);
  const double b = std::numbers::pi / x;
  const int m = cfg.euler_depth;
  const int first_avg = cfg.terms - 1 - m;
  const auto& w = detail::euler_weights(m);

  double sum_cdf = 0.0;
  double sum_pdf = 0.0;
  double avg_cdf = 0.0;
  double avg_pdf = 0.0;
  for (int k = 0; k < cfg.terms; ++k) {
    const std::complex<double> s(a, b * k);
    const std::complex<double> val = lik.phi(s + c2) * inv_phi_c2;
    double tc = (val / s).real();
    double tp = val.real();
    if (k == 0) {
      tc *= 0.5;
      tp *= 0.5;
    } else if (k % 2 == 1) {
      tc = -tc;
      tp = -tp;
    }
    sum_cdf += tc;
    sum_pdf += tp;
    if (k >= first_avg) {
      avg_cdf += w[k - first_avg] * sum_cdf;
      avg_pdf += w[k - first_avg] * sum_pdf;
    }
  }
  const double scale = std::exp(0.5 * cfg.A) / x;
  return {scale * avg_cdf, scale * avg_pdf};
}

template <SuperGaussian L>
double tilted_cdf(const TiltedFamily<L>& fam, double x, const BromwichConfig& cfg = {}) {
  return tilted_cdf_pdf(fam, x, cfg).cdf;
}

template <SuperGaussian L>
double tilted_pdf(const TiltedFamily<L>& fam, double x, const BromwichConfig& cfg = {}) {
  return tilted_cdf_pdf(fam, x, cfg).pdf;
}

/// Solve F(omega) = u. Newton steps omega <- omega - (F - u) / pdf, started from a
/// moment-matched Gamma quantile and kept inside a bracket that is tightened on every evaluation; steps leaving the bracket
/// are replaced by bisection. If Newton does not reach |F - u| <= tol within the iteration
/// budget, plain bisection on the geometrically expanded bracket takes over.
template <SuperGaussian L>
double tilted_quantile(const TiltedFamily<L>& fam, double u, const BromwichConfig& cfg = {}) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double x = detail::quantile_start(fam, u);

  auto midpoint = [&](double l, double h) {
    if (!std::isfinite(h)) return 2.0 * std::max(l, x);
    if (l <= 0.0) return 0.5 * h;
    return (h / l > 4.0) ? std::sqrt(l * h) : 0.5 * (l + h);
  };

  double last_err = 0.0;
  for (int it = 0; it < cfg.newton_max_iter; ++it) {
    const TransformValues v = tilted_cdf_pdf(fam, x, cfg);
    const double err = v.cdf - u;
    last_err = err;
    if (std::abs(err) <= cfg.newton_tol) return x;
    if (err < 0.0) lo = x; else hi = x;
    if (std::isfinite(hi) && hi - lo <= 1e-15 * hi) return x;
    double next = (v.pdf > 0.0) ? x - err / v.pdf : -1.0;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = midpoint(lo, hi);
    x = next;
  }

  // Fallback: bisection. Expand the upper end until it brackets u.
  if (!std::isfinite(hi)) {
    hi = std::max(2.0 * x, 1.0);
    for (int k = 0; k < 200 && tilted_cdf(fam, hi, cfg) < u; ++k) {
      lo = hi;
      hi *= 2.0;
    }
  }
  for (int it = 0; it < 400; ++it) {
    x = midpoint(lo, hi);
    const double err = tilted_cdf(fam, x, cfg) - u;
    last_err = err;
    if (std::abs(err) <= cfg.newton_tol) return x;
    if (err < 0.0) lo = x; else hi = x;
    if (hi - lo <= 1e-15 * hi) return x;
  }
  std::ostringstream msg;
  msg << "inverse-CDF sampling failed: c^2 = " << fam.c2() << ", u = " << u << ", last omega = " << x
      << ", residual = " << last_err << ", bracket = [" << lo << ", " << hi << "]";
  throw SamplingError(msg.str());
}

/// Draw omega ~ pi(. | c) by inverse-CDF sampling.
template <SuperGaussian L>
double sample_tilted(const TiltedFamily<L>& fam, Rng& rng, const BromwichConfig& cfg = {}) {
  return tilted_quantile(fam, uniform_open(rng), cfg);
}

}  // namespace autoconj
