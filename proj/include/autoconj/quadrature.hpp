#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"

namespace autoconj {

/// Gauss-Hermite rule normalized for expectations under N(0, 1/2):
/// E_{N(m, v)}[h] ~= sum_i weights[i] * h(m + sqrt(2 v) * nodes[i]).
struct HermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;  ///< sum to 1
};

/// Golub-Welsch construction, cached per order.
inline const HermiteRule& gauss_hermite(int order) {
  if (order < 1) throw ConstraintError("Gauss-Hermite order must be >= 1");
  static std::mutex mutex;
  static std::map<int, HermiteRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  if (auto it = cache.find(order); it != cache.end()) return it->second;

  HermiteRule rule;
  if (order == 1) {
    rule.nodes = Eigen::VectorXd::Zero(1);
    rule.weights = Eigen::VectorXd::Ones(1);
  } else {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
    Eigen::VectorXd sub(order - 1);
    for (int i = 1; i < order; ++i) sub[i - 1] = std::sqrt(0.5 * i);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
    eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    rule.nodes = eig.eigenvalues();
    rule.weights = eig.eigenvectors().row(0).transpose().array().square();
    // Symmetrize against eigen-solver roundoff.
    for (int i = 0; i < order / 2; ++i) {
      const int j = order - 1 - i;
      const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
      const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
      rule.nodes[i] = -x;
      rule.nodes[j] = x;
      rule.weights[i] = rule.weights[j] = w;
    }
    if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
    rule.weights /= rule.weights.sum();
  }
  return cache.emplace(order, std::move(rule)).first->second;
}

/// E_{N(mean, var)}[fn(f)] with a fixed-order rule.
template <typename Fn>
double gh_expect(double mean, double var, Fn&& fn, int order) {
  if (!(var >= 0.0)) throw DomainError("Gauss-Hermite expectation needs var >= 0");
  const HermiteRule& rule = gauss_hermite(order);
  const double scale = std::sqrt(2.0 * var);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) {
    const double v = fn(mean + scale * rule.nodes[i]);
    if (!std::isfinite(v)) throw NumericalError("non-finite integrand at a Gauss-Hermite node");
    acc += rule.weights[i] * v;
  }
  return acc;
}

/// Starts at `order` and doubles while consecutive orders differ by more than rel_tol
/// (relative), up to max_order.
template <typename Fn>
double gh_expect_adaptive(double mean, double var, Fn&& fn, int order = 32, double rel_tol = 1e-6,
                          int max_order = 512) {
  double prev = gh_expect(mean, var, fn, order);
  while (order < max_order) {
    order *= 2;
    const double next = gh_expect(mean, var, fn, order);
    if (std::abs(next - prev) <= rel_tol * std::max(1.0, std::abs(next))) return next;
    prev = next;
  }
  return prev;
}

}  // namespace autoconj
