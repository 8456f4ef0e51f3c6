#pragma once

// Super-Gaussian likelihoods:
//
//   p(y | f) = C * exp(g(y) f) * phi(|h(f, y)|^2),   |h|^2 = alpha(y) - beta(y) f + gamma(y) f^2
//
// with phi completely monotone and phi(0) = 1. Inference code only touches a likelihood
// through the members required by the SuperGaussian concept, so any type providing them
// can be plugged into the CAVI, SVI and Gibbs routines.

#include <cmath>
#include <complex>
#include <concepts>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "autoconj/errors.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

enum class Support { regression, binary };

enum class Family { student_t, laplace, logistic, bayesian_svm, matern32 };

/// Coefficients of |h(f, y)|^2 = alpha - beta * f + gamma * f^2 for a fixed target y.
struct QuadraticForm {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  double operator()(double f) const { return alpha - beta * f + gamma * f * f; }
  /// E[|h|^2] under f ~ N(mean, var).
  double expectation(double mean, double var) const {
    return alpha - beta * mean + gamma * (mean * mean + var);
  }
};

template <typename L>
concept SuperGaussian = requires(const L& lik, double x, std::complex<double> z) {
  { lik.support() } -> std::same_as<Support>;
  { lik.log_norm_const() } -> std::convertible_to<double>;
  { lik.g(x) } -> std::convertible_to<double>;
  { lik.coefficients(x) } -> std::same_as<QuadraticForm>;
  { lik.log_phi(x) } -> std::convertible_to<double>;
  { lik.phi(z) } -> std::same_as<std::complex<double>>;
  { lik.dlog_phi(x) } -> std::convertible_to<double>;
  { lik.d2log_phi(x) } -> std::convertible_to<double>;
  { lik.singular_at_origin() } -> std::convertible_to<bool>;
  lik.check_target(x);
};

/// One of the five shipped likelihood families. Immutable value type.
class Likelihood {
 public:
  using Params = std::map<std::string, double>;

  static Likelihood student_t(double nu, double sigma = 1.0) {
    require_positive("nu", nu);
    require_positive("sigma", sigma);
    return {Family::student_t, nu, sigma};
  }
  static Likelihood laplace(double beta) {
    require_positive("beta", beta);
    return {Family::laplace, beta, 0.0};
  }
  static Likelihood logistic() { return {Family::logistic, 0.0, 0.0}; }
  static Likelihood bayesian_svm() { return {Family::bayesian_svm, 0.0, 0.0}; }
  static Likelihood matern32(double rho) {
    require_positive("rho", rho);
    return {Family::matern32, rho, 0.0};
  }

  /// Build a likelihood by name ("student-t", "laplace", "logistic", "bayesian-svm",
  /// "matern32"). Unknown parameter keys are rejected.
  static Likelihood make(std::string_view name, const Params& params = {}) {
    auto get = [&](const char* key, double fallback) {
      auto it = params.find(key);
      return it == params.end() ? fallback : it->second;
    };
    auto allow_only = [&](std::initializer_list<std::string_view> keys) {
      for (const auto& [k, v] : params) {
        bool ok = false;
        for (auto allowed : keys) ok = ok || (k == allowed);
        if (!ok) {
          throw ConstraintError("unknown parameter '" + k + "' for likelihood '" + std::string(name) + "'");
        }
      }
    };
    if (name == "student-t" || name == "studentt" || name == "student_t") {
      allow_only({"nu", "sigma"});
      return student_t(get("nu", 3.0), get("sigma", 1.0));
    }
    if (name == "laplace") {
      allow_only({"beta", "scale"});
      return laplace(get("beta", get("scale", 1.0)));
    }
    if (name == "logistic") {
      allow_only({});
      return logistic();
    }
    if (name == "bayesian-svm" || name == "svm" || name == "bayesian_svm") {
      allow_only({});
      return bayesian_svm();
    }
    if (name == "matern32" || name == "matern-3/2" || name == "matern") {
      allow_only({"rho"});
      return matern32(get("rho", 1.0));
    }
    throw ConstraintError("unknown likelihood '" + std::string(name) + "'");
  }

  Family family() const { return family_; }

  std::string_view name() const {
    switch (family_) {
      case Family::student_t: return "student-t";
      case Family::laplace: return "laplace";
      case Family::logistic: return "logistic";
      case Family::bayesian_svm: return "bayesian-svm";
      case Family::matern32: return "matern32";
    }
    return "";
  }

  Params hyperparams() const {
    switch (family_) {
      case Family::student_t: return {{"nu", p1_}, {"sigma", p2_}};
      case Family::laplace: return {{"beta", p1_}};
      case Family::matern32: return {{"rho", p1_}};
      default: return {};
    }
  }

  Support support() const {
    return (family_ == Family::logistic || family_ == Family::bayesian_svm) ? Support::binary
                                                                            : Support::regression;
  }

  double log_norm_const() const {
    switch (family_) {
      case Family::student_t:
        return std::lgamma(0.5 * (p1_ + 1.0)) - std::lgamma(0.5 * p1_) -
               0.5 * std::log(p1_ * std::numbers::pi) - std::log(p2_);
      case Family::laplace: return -std::log(2.0 * p1_);
      case Family::logistic: return -std::numbers::ln2;
      case Family::bayesian_svm: return -1.0;
      case Family::matern32: return std::log(std::numbers::sqrt3 / (4.0 * p1_));
    }
    return 0.0;
  }

  double g(double y) const {
    switch (family_) {
      case Family::logistic: return 0.5 * y;
      case Family::bayesian_svm: return y;
      default: return 0.0;
    }
  }

  QuadraticForm coefficients(double y) const {
    switch (family_) {
      case Family::student_t: {
        const double a = 1.0 / (p2_ * p2_);
        return {a * y * y, 2.0 * a * y, a};
      }
      case Family::logistic: return {0.0, 0.0, 1.0};
      case Family::bayesian_svm: return {1.0, 2.0 * y, 1.0};
      default: return {y * y, 2.0 * y, 1.0};
    }
  }

  double h_squared(double y, double f) const { return coefficients(y)(f); }

  double log_phi(double r) const {
    const double s = std::sqrt(r);
    switch (family_) {
      case Family::student_t: return -0.5 * (p1_ + 1.0) * std::log1p(r / p1_);
      case Family::laplace: return -s / p1_;
      case Family::logistic: return -(0.5 * s + std::log1p(std::exp(-s)) - std::numbers::ln2);
      case Family::bayesian_svm: return -s;
      case Family::matern32: {
        const double w = matern_rate() * s;
        return std::log1p(w) - w;
      }
    }
    return 0.0;
  }

  /// Analytic continuation of phi to the right half plane (principal branches). Written
  /// to decay to zero rather than overflow for large |z|.
  std::complex<double> phi(std::complex<double> z) const {
    switch (family_) {
      case Family::student_t: return std::exp(-0.5 * (p1_ + 1.0) * std::log(1.0 + z / p1_));
      case Family::laplace: return std::exp(-std::sqrt(z) / p1_);
      case Family::logistic: {
        // 1 / cosh(w) = 2 e^{-w} / (1 + e^{-2w})
        const std::complex<double> e = std::exp(-0.5 * std::sqrt(z));
        return 2.0 * e / (1.0 + e * e);
      }
      case Family::bayesian_svm: return std::exp(-std::sqrt(z));
      case Family::matern32: {
        const std::complex<double> w = matern_rate() * std::sqrt(z);
        return (1.0 + w) * std::exp(-w);
      }
    }
    return {};
  }

  /// d log phi / dr. Diverges at r = 0 for the Laplace and SVM families.
  double dlog_phi(double r) const {
    const double s = std::sqrt(r);
    switch (family_) {
      case Family::student_t: return -0.5 * (p1_ + 1.0) / (p1_ + r);
      case Family::laplace: return -0.5 / (p1_ * s);
      case Family::logistic: {
        if (s < 1e-4) return -0.125 * (1.0 - s * s / 12.0);
        return -std::tanh(0.5 * s) / (4.0 * s);
      }
      case Family::bayesian_svm: return -0.5 / s;
      case Family::matern32: {
        const double a = matern_rate();
        return -0.5 * a * a / (1.0 + a * s);
      }
    }
    return 0.0;
  }

  /// d^2 log phi / dr^2 (the variance of the tilted auxiliary law).
  double d2log_phi(double r) const {
    const double s = std::sqrt(r);
    switch (family_) {
      case Family::student_t: {
        const double t = p1_ + r;
        return 0.5 * (p1_ + 1.0) / (t * t);
      }
      case Family::laplace: return 0.25 / (p1_ * s * s * s);
      case Family::logistic: {
        if (s < 1e-2) return 1.0 / 96.0 - s * s / 480.0;
        const double half = 0.5 * s;
        const double sech = 1.0 / std::cosh(half);
        return (2.0 * std::tanh(half) - s * sech * sech) / (16.0 * s * s * s);
      }
      case Family::bayesian_svm: return 0.25 / (s * s * s);
      case Family::matern32: {
        const double a = matern_rate();
        const double t = 1.0 + a * s;
        return a * a * a / (4.0 * s * t * t);
      }
    }
    return 0.0;
  }

  /// True when phi'(r) diverges as r -> 0, making the c = 0 tilt improper.
  bool singular_at_origin() const {
    return family_ == Family::laplace || family_ == Family::bayesian_svm;
  }

  void check_target(double y) const {
    if (!std::isfinite(y)) throw DomainError("non-finite target");
    if (support() == Support::binary && y != 1.0 && y != -1.0) {
      throw DomainError("binary target must be -1 or +1, got " + std::to_string(y));
    }
  }

  /// Draw y ~ p(y | f). Binary families draw from the likelihood normalized over {-1, +1}.
  double sample_target(double f, Rng& rng) const {
    switch (family_) {
      case Family::student_t: {
        std::student_t_distribution<double> t(p1_);
        return f + p2_ * t(rng);
      }
      case Family::laplace: {
        std::exponential_distribution<double> e(1.0);
        return f + p1_ * (e(rng) - e(rng));
      }
      case Family::matern32: {
        // |u| is an equal mixture of Exp(a) and Gamma(2, a).
        const double a = matern_rate();
        std::gamma_distribution<double> g1(1.0, 1.0 / a), g2(2.0, 1.0 / a);
        const double mag = uniform_open(rng) < 0.5 ? g1(rng) : g2(rng);
        return uniform_open(rng) < 0.5 ? f - mag : f + mag;
      }
      default: {
        const double p_plus = class_probability(f);
        return uniform_open(rng) < p_plus ? 1.0 : -1.0;
      }
    }
  }

  /// p(y = +1 | f) after normalizing the likelihood over both labels.
  double class_probability(double f) const {
    const double lp = log_norm_const() + g(1.0) * f + log_phi(coefficients(1.0)(f));
    const double lm = log_norm_const() + g(-1.0) * f + log_phi(coefficients(-1.0)(f));
    return 1.0 / (1.0 + std::exp(lm - lp));
  }

  friend bool operator==(const Likelihood&, const Likelihood&) = default;

 private:
  Likelihood(Family family, double p1, double p2) : family_(family), p1_(p1), p2_(p2) {}

  static void require_positive(const char* name, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConstraintError(std::string("likelihood parameter '") + name + "' must be > 0, got " +
                            std::to_string(v));
    }
  }

  double matern_rate() const { return std::numbers::sqrt3 / p1_; }

  Family family_;
  double p1_;  // nu | beta | rho
  double p2_;  // sigma (student-t)
};

static_assert(SuperGaussian<Likelihood>);

template <SuperGaussian L>
double phi(const L& lik, double r) {
  return std::exp(lik.log_phi(r));
}

template <SuperGaussian L>
double phi_prime(const L& lik, double r) {
  return phi(lik, r) * lik.dlog_phi(r);
}

/// log p(y | f) = log C + g(y) f + log phi(|h(f, y)|^2).
template <SuperGaussian L>
double log_likelihood(const L& lik, double y, double f) {
  lik.check_target(y);
  const double r = std::max(0.0, lik.coefficients(y)(f));
  return lik.log_norm_const() + lik.g(y) * f + lik.log_phi(r);
}

}  // namespace autoconj
