#include <cmath>

#include <gtest/gtest.h>

#include "autoconj/diagnostics.hpp"
#include "oracles.hpp"

using namespace autoconj;

namespace {

Eigen::VectorXd white_noise(Eigen::Index n, std::uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  return standard_normal_vector(n, rng).array() + shift;
}

}  // namespace

TEST(Diagnostics, ConstantTraceIsAnError) {
  EXPECT_THROW(autocorr(Eigen::VectorXd::Constant(100, 2.0), 5), NumericalError);
  EXPECT_THROW(autocorr(white_noise(5, 1), 10), DimensionError);
}

TEST(Diagnostics, LagZeroIsOne) {
  const Eigen::VectorXd rho = autocorr(oracle::ar1(0.5, 1000, 2), 10);
  EXPECT_DOUBLE_EQ(rho[0], 1.0);
  EXPECT_EQ(rho.size(), 11);
}

TEST(Diagnostics, WhiteNoiseLagOneIsSmall) {
  const Eigen::VectorXd rho = autocorr(white_noise(10000, 3), 1);
  EXPECT_LT(std::abs(rho[1]), 3.0 / std::sqrt(10000.0));
}

TEST(Diagnostics, Ar1LagOne) {
  const Eigen::VectorXd rho = autocorr(oracle::ar1(0.9, 100000, 4), 1);
  EXPECT_GE(rho[1], 0.88);
  EXPECT_LE(rho[1], 0.92);
}

TEST(Diagnostics, GelmanRubinWellMixed) {
  std::vector<Eigen::VectorXd> chains;
  for (int k = 0; k < 4; ++k) chains.push_back(white_noise(10000, 10 + k));
  const double r = gelman_rubin(chains);
  EXPECT_LT(r, 1.01);
  EXPECT_GT(r, 1.0 - 1e-3);
}

TEST(Diagnostics, GelmanRubinDetectsSeparatedChains) {
  EXPECT_GT(gelman_rubin({white_noise(1000, 20, -10.0), white_noise(1000, 21, 10.0)}), 2.0);
}

TEST(Diagnostics, GelmanRubinDetectsDriftWithinChain) {
  // A trend inside each chain is only visible after splitting.
  Eigen::VectorXd a = white_noise(2000, 22), b = white_noise(2000, 23);
  for (Eigen::Index t = 0; t < 2000; ++t) {
    a[t] += 6.0 * t / 2000.0;
    b[t] += 6.0 * t / 2000.0;
  }
  EXPECT_GT(gelman_rubin({a, b}), 1.2);
}

TEST(Diagnostics, GelmanRubinErrors) {
  EXPECT_THROW(gelman_rubin({white_noise(100, 1)}), ConstraintError);
  EXPECT_THROW(gelman_rubin({white_noise(100, 1), white_noise(90, 2)}), DimensionError);
}

TEST(Diagnostics, EssOfIidTrace) {
  const double N = 20000;
  const double e = ess(white_noise(20000, 30));
  EXPECT_GE(e, 0.8 * N);
  EXPECT_LE(e, 1.2 * N);
}

TEST(Diagnostics, EssOfAr1) {
  const double N = 100000, phi = 0.9;
  const double expected = N * (1 - phi) / (1 + phi);
  EXPECT_NEAR(ess(oracle::ar1(phi, 100000, 31)), expected, 0.2 * expected);
}

TEST(Diagnostics, EssIsClampedForAlternatingTrace) {
  Eigen::VectorXd x(1000);
  for (Eigen::Index t = 0; t < 1000; ++t) x[t] = (t % 2) ? 1.0 : -1.0;
  const double e = ess(x);
  EXPECT_LE(e, 1000.0);
  EXPECT_GE(e, 1.0);
}

TEST(Diagnostics, EssFromAutocorrAgreesWithEss) {
  const Eigen::VectorXd x = oracle::ar1(0.6, 5000, 32);
  EXPECT_NEAR(ess_from_autocorr(autocorr(x, 200), 5000), ess(x), 1e-9);
}

TEST(Diagnostics, ReportFromChainStore) {
  ChainStore store;
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd f(500, 6);
    for (Eigen::Index j = 0; j < 6; ++j) f.col(j) = oracle::ar1(0.3, 500, 100 * k + j);
    store.f.push_back(f);
    store.timings.push_back({0.1, 0.02, 0.5, 500});
  }
  const DiagnosticsReport rep = diagnose(store, 15, 7);
  ASSERT_EQ(rep.scalars.size(), 4u);
  EXPECT_EQ(rep.scalars[0].name, "mean_f");
  for (const auto& s : rep.scalars) {
    EXPECT_DOUBLE_EQ(s.autocorr[0], 1.0);
    EXPECT_GE(s.rhat, 1.0 - 1e-2);
    EXPECT_LE(s.ess, 1500.0);
  }
  EXPECT_NEAR(rep.seconds_per_sample, 1e-3, 1e-12);
  EXPECT_LT(rep.worst_lag1, 0.45);
  EXPECT_GT(rep.worst_lag1, 0.15);
  EXPECT_LT(rep.worst_rhat, 1.05);
  // Same seed, same coordinates.
  EXPECT_EQ(diagnose(store, 15, 7).scalars[2].name, rep.scalars[2].name);
}

TEST(Diagnostics, SingleChainHasNoRhat) {
  ChainStore store;
  store.f.push_back(Eigen::MatrixXd(white_noise(400, 5).replicate(1, 2)));
  const DiagnosticsReport rep = diagnose(store, 5);
  EXPECT_TRUE(std::isnan(rep.worst_rhat));
  EXPECT_TRUE(std::isnan(rep.scalars[0].rhat));
}
