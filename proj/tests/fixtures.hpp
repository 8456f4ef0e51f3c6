#pragma once

// Small synthetic problems shared by the unit tests.

#include <cmath>

#include <Eigen/Dense>

#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace fixture {

struct Problem {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd f;
};

/// Inputs ~ N(0, I), latent f(x) = sin(2 x_1) + 0.5 x_2, targets drawn from the likelihood.
inline Problem make_problem(const autoconj::Likelihood& lik, Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  autoconj::Rng rng(seed);
  Problem p;
  p.X.resize(n, d);
  for (Eigen::Index i = 0; i < p.X.size(); ++i) p.X.data()[i] = autoconj::standard_normal(rng);
  p.f.resize(n);
  p.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.f[i] = std::sin(2.0 * p.X(i, 0)) + (d > 1 ? 0.5 * p.X(i, 1) : 0.0);
    p.y[i] = lik.sample_target(p.f[i], rng);
  }
  return p;
}

inline std::vector<autoconj::Likelihood> five_families() {
  using autoconj::Likelihood;
  return {Likelihood::student_t(3.0, 0.5), Likelihood::laplace(0.5), Likelihood::logistic(), Likelihood::bayesian_svm(),
          Likelihood::matern32(0.5)};
}

}  // namespace fixture
