#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "autoconj/dataio.hpp"
#include "autoconj/io.hpp"

using namespace autoconj;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("autoconj_dataio_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }

  fs::path dir_;
};

Dataset numbered(Eigen::Index n) {
  Dataset ds;
  ds.X = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1));
  ds.y = ds.X.col(0);
  ds.standardization = Standardization::identity(1);
  ds.feature_names = {"x0"};
  return ds;
}

}  // namespace

using DataIo = TempDir;

TEST_F(DataIo, TwoRowFileStandardizesToPlusMinusOne) {
  const Dataset ds = load_csv(write("two.csv", "0,5\n2,7\n"));
  ASSERT_EQ(ds.X.rows(), 2);
  EXPECT_DOUBLE_EQ(ds.X(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(ds.X(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(ds.standardization.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(ds.standardization.sd[0], 1.0);
  EXPECT_EQ(ds.y, Eigen::Vector2d(5, 7));
  EXPECT_TRUE(ds.warnings.empty());
}

TEST_F(DataIo, BinaryLabelsAreSigned) {
  const Dataset ds = load_csv(write("b.csv", "0.1,0\n0.3,1\n0.2,1\n"), "last", Task::binary);
  EXPECT_EQ(ds.y, Eigen::Vector3d(-1, 1, 1));
  EXPECT_EQ(ds.task, Task::binary);
  const Dataset signed_ds = load_csv(write("s.csv", "0.1,-1\n0.3,1\n"), "last", Task::binary);
  EXPECT_EQ(signed_ds.y, Eigen::Vector2d(-1, 1));
  EXPECT_THROW(load_csv(write("bad.csv", "0.1,2\n0.3,1\n"), "last", Task::binary), DomainError);
}

TEST_F(DataIo, HeaderIsDetected) {
  const Dataset ds = load_csv(write("h.csv", "a, b ,target\n1,2,3\n3,4,5\n5,9,1\n"), "target");
  EXPECT_EQ(ds.X.rows(), 3);
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.target_name, "target");
  EXPECT_EQ(ds.y, Eigen::Vector3d(3, 5, 1));
  const Dataset first = load_csv(write("f.csv", "7,1,2\n8,3,4\n"), "first");
  EXPECT_EQ(first.y, Eigen::Vector2d(7, 8));
  const Dataset by_index = load_csv(write("i.csv", "7,1,2\n8,3,4\n"), "1");
  EXPECT_EQ(by_index.y, Eigen::Vector2d(1, 3));
  EXPECT_THROW(load_csv(write("i2.csv", "7,1,2\n8,3,4\n"), "missing"), ConstraintError);
}

TEST_F(DataIo, MissingValuesListTheRows) {
  try {
    load_csv(write("m.csv", "x,y\n1,2\n,3\n4,5\n6,NA\n"));
    FAIL() << "expected an error";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lines 3, 5"), std::string::npos) << msg;
  }
  EXPECT_THROW(load_csv(write("r.csv", "1,2\n3\n")), DomainError);
  EXPECT_THROW(load_csv((dir_ / "absent.csv").string()), ConstraintError);
}

TEST_F(DataIo, ConstantColumnWarns) {
  const Dataset ds = load_csv(write("c.csv", "c,v,y\n4,1,0\n4,2,0\n4,3,1\n"));
  ASSERT_EQ(ds.warnings.size(), 1u);
  EXPECT_NE(ds.warnings[0].find("'c'"), std::string::npos);
  EXPECT_DOUBLE_EQ(ds.standardization.sd[0], 1.0);
  EXPECT_TRUE((ds.X.col(0).array() == 0.0).all());
}

TEST(DataIoSplit, FractionBounds) {
  const Dataset ds = numbered(20);
  EXPECT_THROW(split(ds, 0.0, 1), ConstraintError);
  EXPECT_THROW(split(ds, 1.0, 1), ConstraintError);
  EXPECT_THROW(split(ds, -0.2, 1), ConstraintError);
  EXPECT_THROW(split(ds, 1e-3, 1), ConstraintError);  // rounds to an empty test set
}

TEST(DataIoSplit, RepeatableAndPartitioning) {
  const Dataset ds = numbered(50);
  const auto [tr1, te1] = split(ds, 0.2, 7);
  const auto [tr2, te2] = split(ds, 0.2, 7);
  EXPECT_EQ(tr1.y, tr2.y);
  EXPECT_EQ(te1.y, te2.y);
  EXPECT_EQ(te1.size(), 10);
  EXPECT_EQ(tr1.size(), 40);
  std::set<double> all;
  for (double v : tr1.y) all.insert(v);
  for (double v : te1.y) all.insert(v);
  EXPECT_EQ(all.size(), 50u);  // disjoint and exhaustive
  const auto [tr3, te3] = split(ds, 0.2, 8);
  EXPECT_NE(te1.y, te3.y);
}

TEST(DataIoSplit, StandardizationIsFittedOnTrain) {
  const Dataset ds = numbered(30);
  const auto [train, test] = split(ds, 0.3, 2);
  EXPECT_NEAR(train.X.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(train.X.col(0).squaredNorm() / static_cast<double>(train.size()), 1.0, 1e-12);
  EXPECT_EQ(test.standardization.mean, train.standardization.mean);
  // Features still identify their rows after the round trip.
  EXPECT_LT((test.raw_features().col(0) - test.y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DataIoStandardize, RoundTrip) {
  Rng rng(3);
  Eigen::MatrixXd raw(40, 3);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = 100.0 * standard_normal(rng) + 7.0;
  const Standardization s = Standardization::fit(raw);
  EXPECT_LT((s.invert(s.apply(raw)) - raw).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd z = s.apply(raw);
  EXPECT_LT((s.apply(s.invert(z)) - z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(s.apply(Eigen::MatrixXd::Zero(2, 2)), DimensionError);
}

TEST(DataIoSynth, Deterministic) {
  const auto lik = Likelihood::laplace(1.0);
  const Dataset a = synth(SynthKind::gp_regression, 30, 2, KernelConfig{}, lik, 5);
  const Dataset b = synth(SynthKind::gp_regression, 30, 2, KernelConfig{}, lik, 5);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_NE(fingerprint(a), fingerprint(synth(SynthKind::gp_regression, 30, 2, KernelConfig{}, lik, 6)));
}

TEST(DataIoSynth, LargeNuStudentTIsNearlyGaussian) {
  // A negligible latent scale leaves y equal to the noise draw up to ~1e-3.
  KernelConfig cfg;
  cfg.variance = 1e-10;
  const Dataset ds = synth(SynthKind::gp_regression, 5000, 1, cfg, Likelihood::student_t(100.0), 9);
  const double m = ds.y.mean();
  const Eigen::ArrayXd c = ds.y.array() - m;
  const double m2 = c.square().mean(), m4 = c.square().square().mean();
  EXPECT_LT(std::abs(m4 / (m2 * m2) - 3.0), 0.2);
}

TEST(DataIoSynth, BlobsAreBalanced) {
  const int n = 4000;
  const Dataset ds = synth(SynthKind::two_blobs, n, 3, KernelConfig{}, Likelihood::logistic(), 10);
  const double positives = (ds.y.array() > 0.0).count();
  EXPECT_NEAR(positives / n, 0.5, 3.0 * std::sqrt(0.25 / n));
  EXPECT_TRUE((ds.y.array().abs() == 1.0).all());
  // Class means sit on opposite sides along the diagonal.
  double plus = 0.0, minus = 0.0;
  for (int i = 0; i < n; ++i) (ds.y[i] > 0 ? plus : minus) += ds.X.row(i).sum();
  EXPECT_GT(plus, 0.0);
  EXPECT_LT(minus, 0.0);
}

TEST(DataIoSynth, Guards) {
  const auto lik = Likelihood::student_t(3.0);
  EXPECT_THROW(synth(SynthKind::gp_regression, 10001, 1, KernelConfig{}, lik, 1), ConstraintError);
  EXPECT_THROW(synth(SynthKind::gp_regression, 0, 1, KernelConfig{}, lik, 1), ConstraintError);
  EXPECT_THROW(synth(SynthKind::gp_regression, 10, 1, KernelConfig{}, Likelihood::logistic(), 1), ConstraintError);
  EXPECT_THROW(parse_synth_kind("spirals"), ConstraintError);
  EXPECT_EQ(parse_synth_kind("two-blobs-classification"), SynthKind::two_blobs);
  EXPECT_THROW(parse_task("ordinal"), ConstraintError);
}

TEST_F(DataIo, ModelRoundTrip) {
  ModelFile m;
  m.method = "cavi";
  m.likelihood = Likelihood::matern32(0.7);
  m.kernel.variance = 2.5;
  m.kernel.lengthscales = Eigen::Vector2d(0.3, 4.0);
  m.task = Task::regression;
  m.standardization = {Eigen::RowVector2d(1.0, -2.0), Eigen::RowVector2d(0.5, 3.0)};
  m.inputs = Eigen::MatrixXd::Random(4, 2);
  m.mean = Eigen::VectorXd::Random(4);
  m.cov = Eigen::MatrixXd::Identity(4, 4) * 0.25;
  m.prior_mean = Eigen::VectorXd::Zero(4);
  save_model(dir_, m);
  const ModelFile r = load_model(dir_ / "model.json");
  EXPECT_EQ(r.method, "cavi");
  EXPECT_EQ(r.likelihood.family(), Family::matern32);
  EXPECT_DOUBLE_EQ(r.likelihood.hyperparams().at("rho"), 0.7);
  EXPECT_DOUBLE_EQ(r.kernel.variance, 2.5);
  EXPECT_EQ(r.kernel.lengthscales, m.kernel.lengthscales);
  EXPECT_EQ(r.inputs, m.inputs);
  EXPECT_EQ(r.mean, m.mean);
  EXPECT_EQ(r.cov, m.cov);
  EXPECT_EQ(r.standardization.sd, m.standardization.sd);
  EXPECT_THROW(load_model(dir_ / "nothing.json"), ConstraintError);
  std::ofstream(dir_ / "junk.json") << "{not json";
  EXPECT_THROW(load_model(dir_ / "junk.json"), ConstraintError);
}
