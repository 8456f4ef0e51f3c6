#include <cmath>

#include <gtest/gtest.h>

#include "autoconj/kernels.hpp"
#include "autoconj/random.hpp"

using namespace autoconj;

TEST(Kernels, ZeroDistanceGivesVariance) {
  KernelConfig cfg;
  cfg.variance = 2.5;
  Eigen::MatrixXd X(1, 3);
  X << 0.3, -1.0, 4.0;
  EXPECT_DOUBLE_EQ(gram(X, X, cfg)(0, 0), 2.5);
}

TEST(Kernels, UnitDistanceExample) {
  KernelConfig cfg;
  cfg.variance = 0.1;
  Eigen::MatrixXd a(1, 1), b(1, 1);
  a << 0.0;
  b << 1.0;
  // exp(-||x - x'||^2 / l^2) with l = 1 and squared distance 1
  EXPECT_NEAR(gram(a, b, cfg)(0, 0), 0.1 * std::exp(-1.0), 1e-16);
}

TEST(Kernels, ArdLengthscalesScaleEachDimension) {
  KernelConfig cfg;
  cfg.lengthscales = Eigen::Vector2d(2.0, 0.5);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 2), b(1, 2);
  b << 2.0, 0.5;
  EXPECT_NEAR(gram(a, b, cfg)(0, 0), std::exp(-2.0), 1e-15);
}

TEST(Kernels, HugeLengthscaleGivesVarianceEverywhere) {
  KernelConfig cfg;
  cfg.variance = 0.7;
  cfg.lengthscales = Eigen::VectorXd::Constant(1, 1e12);
  Rng rng(3);
  Eigen::MatrixXd X(5, 2);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = standard_normal(rng);
  EXPECT_TRUE(gram(X, cfg).isApproxToConstant(0.7, 1e-12));
}

TEST(Kernels, GramIsSymmetricPositiveSemidefinite) {
  Rng rng(5);
  Eigen::MatrixXd X(30, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = standard_normal(rng);
  KernelConfig cfg;
  cfg.lengthscales = Eigen::Vector3d(0.5, 1.0, 2.0);
  const Eigen::MatrixXd K = gram(X, cfg);
  EXPECT_EQ(K, K.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-12);
  EXPECT_LE((gram(X, X, cfg) - K).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Kernels, IdentityFactorsToIdentity) {
  const CholeskyFactor L = chol_jitter(Eigen::MatrixXd::Identity(4, 4), 0.0);
  EXPECT_TRUE(L.matrix().isIdentity(0.0));
  EXPECT_EQ(L.jitter(), 0.0);
  EXPECT_NEAR(L.log_det(), 0.0, 1e-15);
}

TEST(Kernels, RankDeficientMatrixNeedsJitter) {
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 3);
  const CholeskyFactor L = chol_jitter(ones, 1e-6);
  EXPECT_GE(L.jitter(), 1e-6);
  Eigen::MatrixXd expected = ones;
  expected.diagonal().array() += L.jitter();
  EXPECT_LT((L.reconstruct() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernels, IndefiniteMatrixExhaustsEscalation) {
  Eigen::MatrixXd K = Eigen::MatrixXd::Identity(3, 3);
  K(1, 1) = -1.0;
  try {
    chol_jitter(K, 1e-6);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("min eigenvalue"), std::string::npos);
  }
}

TEST(Kernels, JitterEscalatesTenfold) {
  // Eigenvalues {0, 2}: the factorization needs some positive jitter, reached from 1e-10 upward.
  Eigen::Matrix2d K;
  K << 1.0, 1.0, 1.0, 1.0;
  const CholeskyFactor L = chol_jitter(K, 0.0);
  const double exponent = std::log10(L.jitter());
  EXPECT_NEAR(exponent, std::round(exponent), 1e-9);
  EXPECT_GE(L.jitter(), 1e-10);
}

TEST(Kernels, SolvesAgreeWithDenseInverse) {
  Rng rng(9);
  Eigen::MatrixXd A(6, 6);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = standard_normal(rng);
  const Eigen::MatrixXd K = A * A.transpose() + Eigen::MatrixXd::Identity(6, 6);
  const CholeskyFactor L = chol_jitter(K, 0.0);
  const Eigen::VectorXd b = standard_normal_vector(6, rng);
  EXPECT_LT((L.solve(b) - K.inverse() * b).norm(), 1e-10);
  EXPECT_LT((L.matrix() * L.solve_lower(b) - b).norm(), 1e-12);
  EXPECT_LT((L.matrix().transpose() * L.solve_upper(b) - b).norm(), 1e-12);
  EXPECT_NEAR(L.log_det(), std::log(K.determinant()), 1e-10);
}

TEST(Kernels, CrossCovarianceNuggetOnCoincidentRows) {
  Eigen::MatrixXd X(3, 1), Z(2, 1);
  X << 0.0, 1.0, 2.0;
  Z << 1.0, 5.0;
  KernelConfig cfg;
  const Eigen::MatrixXd K = cross_cov(X, Z, cfg, 0.25);
  const Eigen::MatrixXd G = gram(X, Z, cfg);
  EXPECT_DOUBLE_EQ(K(1, 0), G(1, 0) + 0.25);
  EXPECT_DOUBLE_EQ(K(0, 0), G(0, 0));
  EXPECT_DOUBLE_EQ(K(2, 1), G(2, 1));
}

TEST(Kernels, ConfigValidation) {
  KernelConfig cfg;
  cfg.variance = 0.0;
  EXPECT_THROW(cfg.validate(2), ConstraintError);
  cfg.variance = 1.0;
  cfg.lengthscales = Eigen::Vector3d(1, 1, 1);
  EXPECT_THROW(cfg.validate(2), DimensionError);
  cfg.lengthscales = Eigen::Vector2d(1, -1);
  EXPECT_THROW(cfg.validate(2), ConstraintError);
  Eigen::MatrixXd a(1, 2), b(1, 3);
  EXPECT_THROW(gram(a, b, KernelConfig{}), DimensionError);
}
