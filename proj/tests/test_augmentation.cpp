#include <cmath>
#include <numbers>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <gtest/gtest.h>

#include "autoconj/augmentation.hpp"
#include "oracles.hpp"

using namespace autoconj;

TEST(Augmentation, MeanOmegaExamples) {
  const auto st = Likelihood::student_t(3.0);
  const auto lo = Likelihood::logistic();
  const auto la = Likelihood::laplace(1.0);
  EXPECT_NEAR(mean_omega(TiltedFamily(st, 1.0)), 0.5, 1e-15);
  EXPECT_NEAR(mean_omega(TiltedFamily(lo, 0.0)), 0.125, 1e-15);
  EXPECT_NEAR(mean_omega(TiltedFamily(lo, 1e-7)), 0.125, 1e-12);
  EXPECT_NEAR(mean_omega(TiltedFamily(la, 1.0)), 0.5, 1e-15);
}

TEST(Augmentation, MeanOmegaIsContinuousNearOrigin) {
  const auto lo = Likelihood::logistic();
  for (double c : {1e-5, 1e-4, 2e-4, 1e-3, 1e-2}) {
    EXPECT_NEAR(mean_omega(TiltedFamily(lo, c)), std::tanh(0.5 * c) / (4.0 * c), 1e-14);
  }
}

TEST(Augmentation, KlExamples) {
  const auto st = Likelihood::student_t(3.0);
  const auto lo = Likelihood::logistic();
  EXPECT_NEAR(kl_omega(TiltedFamily(st, 1.0)), -0.5 + 2.0 * std::log(4.0 / 3.0), 1e-14);
  EXPECT_NEAR(kl_omega(TiltedFamily(lo, 2.0)), -4.0 * std::tanh(1.0) / 8.0 + std::log(std::cosh(1.0)), 1e-14);
  EXPECT_NEAR(kl_omega(TiltedFamily(st, 1.0)), 0.07536, 1e-5);
  EXPECT_NEAR(kl_omega(TiltedFamily(lo, 2.0)), 0.052984, 1e-6);
  EXPECT_EQ(kl_omega(TiltedFamily(st, 0.0)), 0.0);
  EXPECT_EQ(kl_omega(TiltedFamily(lo, 0.0)), 0.0);
}

TEST(Augmentation, KlIsNonnegative) {
  for (const auto& lik : {Likelihood::student_t(2.0), Likelihood::laplace(0.5), Likelihood::logistic(),
                          Likelihood::bayesian_svm(), Likelihood::matern32(1.2)}) {
    for (double c = 0.01; c < 30.0; c *= 1.5) EXPECT_GE(kl_omega(TiltedFamily(lik, c)), -1e-14) << lik.name();
  }
}

TEST(Augmentation, Cumulants) {
  const auto st = Likelihood::student_t(3.0);
  EXPECT_NEAR(cumulant(TiltedFamily(st, 1.0), 1), 0.5, 1e-15);
  EXPECT_NEAR(cumulant(TiltedFamily(st, 0.0), 2), 2.0 / 9.0, 1e-15);
  EXPECT_THROW(cumulant(TiltedFamily(st, 0.0), 3), ConstraintError);
}

TEST(Augmentation, SingularFamiliesAreClamped) {
  const auto la = Likelihood::laplace(1.0);
  const TiltedFamily fam(la, 0.0);
  EXPECT_TRUE(fam.clamped());
  EXPECT_DOUBLE_EQ(fam.c2(), kTiltGuard);
  EXPECT_TRUE(std::isfinite(mean_omega(fam)));
  EXPECT_FALSE(TiltedFamily(Likelihood::logistic(), 0.0).clamped());
  EXPECT_FALSE(TiltedFamily(la, 1e-3).clamped());
}

TEST(Augmentation, StudentTCdfExample) {
  const auto st = Likelihood::student_t(3.0);
  const TiltedFamily fam(st, 0.0);
  EXPECT_NEAR(tilted_cdf(fam, 2.0 / 3.0), 1.0 - 3.0 * std::exp(-2.0), 1e-7);
  EXPECT_NEAR(tilted_pdf(fam, 1.0 / 3.0), 9.0 * (1.0 / 3.0) * std::exp(-1.0), 1e-7);
}

TEST(Augmentation, StudentTTransformMatchesGamma) {
  for (double nu : {2.0, 5.0}) {
    const auto st = Likelihood::student_t(nu);
    for (double c : {0.0, 2.0}) {
      const auto ref = oracle::student_t_tilted(nu, c);
      const TiltedFamily fam(st, c);
      for (double p : {0.01, 0.2, 0.5, 0.9, 0.999}) {
        const double x = boost::math::quantile(ref, p);
        const auto v = tilted_cdf_pdf(fam, x);
        EXPECT_NEAR(v.cdf, p, 1e-6);
        EXPECT_NEAR(v.pdf, boost::math::pdf(ref, x), 1e-5 * std::max(1.0, boost::math::pdf(ref, x)));
      }
    }
  }
}

TEST(Augmentation, CdfTendsToOne) {
  for (const auto& lik : {Likelihood::student_t(3.0), Likelihood::laplace(1.0), Likelihood::logistic(),
                          Likelihood::bayesian_svm(), Likelihood::matern32(1.0)}) {
    const TiltedFamily fam(lik, 0.7);
    EXPECT_NEAR(tilted_cdf(fam, 1e4 * mean_omega(fam)), 1.0, 1e-3) << lik.name();
  }
}

TEST(Augmentation, PdfIntegratesToOne) {
  for (const auto& lik : {Likelihood::student_t(3.0), Likelihood::laplace(1.0), Likelihood::logistic(),
                          Likelihood::matern32(1.0)}) {
    const TiltedFamily fam(lik, 1.0);
    boost::math::quadrature::tanh_sinh<double> ts;
    const double mass = ts.integrate([&](double x) { return x > 0 ? tilted_pdf(fam, x) : 0.0; }, 0.0,
                                     std::numeric_limits<double>::infinity(), 1e-8);
    EXPECT_NEAR(mass, 1.0, 1e-3) << lik.name();
  }
}

TEST(Augmentation, LogisticPdfMatchesPolyaGammaSeries) {
  const auto lo = Likelihood::logistic();
  for (double c : {0.0, 1.5}) {
    const TiltedFamily fam(lo, c);
    for (double w : {0.05, 0.12, 0.4}) {
      const double ref = oracle::logistic_omega_density(w, c);
      EXPECT_NEAR(tilted_pdf(fam, w), ref, 1e-6 * std::max(1.0, ref)) << "c=" << c << " w=" << w;
    }
  }
}

TEST(Augmentation, LaplaceMedianFromQuadrature) {
  const double beta = 1.0, c = 1.0;
  auto pdf = [&](double w) { return oracle::laplace_omega_density(w, beta, c); };
  EXPECT_NEAR(oracle::quadrature_cdf(pdf, 1e3), 1.0, 1e-8);
  const auto [lo, hi] = boost::math::tools::bisect([&](double x) { return oracle::quadrature_cdf(pdf, x) - 0.5; }, 1e-3,
                                                   10.0, boost::math::tools::eps_tolerance<double>(40));
  const double median = 0.5 * (lo + hi);
  const auto la = Likelihood::laplace(beta);
  EXPECT_NEAR(tilted_cdf(TiltedFamily(la, c), median), 0.5, 1e-6);
}

TEST(Augmentation, QuantileInvertsCdf) {
  for (const auto& lik : {Likelihood::student_t(3.0), Likelihood::laplace(0.7), Likelihood::logistic(),
                          Likelihood::bayesian_svm(), Likelihood::matern32(0.5)}) {
    for (double c : {0.0, 0.3, 4.0}) {
      const TiltedFamily fam(lik, c);
      for (double u : {1e-4, 0.1, 0.5, 0.93, 1.0 - 1e-6}) {
        const double x = tilted_quantile(fam, u);
        EXPECT_NEAR(tilted_cdf(fam, x), u, 1e-8) << lik.name() << " c=" << c << " u=" << u;
      }
    }
  }
}

TEST(Augmentation, StudentTDrawsPassKs) {
  const auto st = Likelihood::student_t(3.0);
  const TiltedFamily fam(st, 1.0);
  Rng rng(2024);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = sample_tilted(fam, rng);
  const auto ref = oracle::student_t_tilted(3.0, 1.0);  // Gamma(2, rate 4)
  EXPECT_GT(oracle::ks_test(xs, [&](double x) { return boost::math::cdf(ref, x); }), 0.01);
}

TEST(Augmentation, LogisticDrawsMatchGammaSumSampler) {
  const auto lo = Likelihood::logistic();
  const double c = 1.0;
  const TiltedFamily fam(lo, c);
  Rng rng(7), rng2(8);
  std::vector<double> a(4000), b(4000);
  for (auto& x : a) x = sample_tilted(fam, rng);
  for (auto& x : b) x = oracle::logistic_omega_sample(c, rng2);
  EXPECT_GT(oracle::ks_two_sample(a, b), 0.01);
}

TEST(Augmentation, LogisticMeanOverManyDraws) {
  const auto lo = Likelihood::logistic();
  const TiltedFamily fam(lo, 1.0);
  Rng rng(99);
  const int N = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < N; ++i) {
    const double x = sample_tilted(fam, rng);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sum2 / N - mean * mean) / N);
  EXPECT_NEAR(mean, std::tanh(0.5) / 4.0, 4.0 * se);
}

TEST(Augmentation, TiltingConsistency) {
  // pi(w | c) = exp(-c^2 w) pi(w | 0) / phi(c^2)
  const auto lo = Likelihood::logistic();
  const double c = 1.3;
  const TiltedFamily base(lo, 0.0), tilted(lo, c);
  for (double w : {0.08, 0.2, 0.5}) {
    EXPECT_NEAR(tilted_pdf(tilted, w), std::exp(-c * c * w) * tilted_pdf(base, w) / phi(lo, c * c), 1e-6);
  }
}

TEST(Augmentation, DrawsAreDeterministic) {
  const auto mt = Likelihood::matern32(1.0);
  const TiltedFamily fam(mt, 0.4);
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_tilted(fam, a), sample_tilted(fam, b));
}

TEST(Augmentation, DomainErrors) {
  const auto st = Likelihood::student_t(3.0);
  const TiltedFamily fam(st, 1.0);
  EXPECT_THROW(tilted_cdf(fam, 0.0), DomainError);
  EXPECT_THROW(tilted_cdf(fam, -1.0), DomainError);
  EXPECT_THROW(tilted_quantile(fam, 1.0), DomainError);
  EXPECT_THROW(TiltedFamily(st, std::nan("")), DomainError);
  BromwichConfig bad;
  bad.terms = 4;
  EXPECT_THROW(bad.validate(), ConstraintError);
}

TEST(Augmentation, BisectionFallbackWhenNewtonBudgetIsTiny) {
  const auto st = Likelihood::student_t(3.0);
  const TiltedFamily fam(st, 0.5);
  BromwichConfig cfg;
  cfg.newton_max_iter = 1;
  const double x = tilted_quantile(fam, 0.37, cfg);
  EXPECT_NEAR(boost::math::cdf(oracle::student_t_tilted(3.0, 0.5), x), 0.37, 1e-7);
}
