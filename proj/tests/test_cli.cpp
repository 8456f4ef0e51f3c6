#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "autoconj/io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
  double seconds = 0.0;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(AUTOCONJ_CLI) + " " + args + " 2>&1";
  RunResult r;
  const auto t0 = std::chrono::steady_clock::now();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("autoconj_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MissingLikelihoodIsUsageError) {
  const RunResult r = run("fit --synth gp-regression");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--likelihood"), std::string::npos) << r.output;
}

TEST_F(Cli, HelpListsFlags) {
  const RunResult r = run("fit --help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--likelihood", "--lik-param", "--lengthscale", "--method", "--inducing", "--batch",
                           "--test-frac", "--synth"}) {
    EXPECT_NE(r.output.find(flag), std::string::npos) << flag;
  }
  const RunResult top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"fit", "sample", "diagnose", "predict", "benchmark", "--seed", "--config"}) {
    EXPECT_NE(top.output.find(sub), std::string::npos) << sub;
  }
}

TEST_F(Cli, RangeErrorsNameTheFlag) {
  const RunResult a = run("fit --likelihood laplace --synth gp-regression --variance -2");
  EXPECT_EQ(a.code, 1);
  EXPECT_NE(a.output.find("--variance"), std::string::npos) << a.output;
  const RunResult b = run("fit --likelihood laplace --synth gp-regression --lik-param beta=-1");
  EXPECT_EQ(b.code, 1);
  EXPECT_NE(b.output.find("beta"), std::string::npos) << b.output;
  const RunResult c = run("fit --likelihood logistic --synth two-blobs --lr-kappa 0.3");
  EXPECT_EQ(c.code, 1);
  EXPECT_NE(c.output.find("--lr-kappa"), std::string::npos) << c.output;
  const RunResult d = run("fit --likelihood logistic --synth two-blobs --test-frac 1.5");
  EXPECT_EQ(d.code, 1);
  EXPECT_NE(d.output.find("--test-frac"), std::string::npos) << d.output;
}

TEST_F(Cli, SmokeFitIsFast) {
  const RunResult r = run("--seed 1 --out-dir " + out("fit") +
                          " fit --likelihood student-t --synth gp-regression --synth-n 50");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_LT(r.seconds, 10.0);
  for (const char* f : {"model.json", "model.bin", "manifest.json", "trace.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "fit" / f)) << f;
  }
  const auto model = autoconj::load_model(dir_ / "fit" / "model.json");
  EXPECT_EQ(model.mean.size(), 50);
}

TEST_F(Cli, ManifestRerunIsByteIdentical) {
  const RunResult a = run("--seed 5 --out-dir " + out("a") +
                          " fit --likelihood logistic --synth two-blobs --synth-n 60 --test-frac 0.25");
  ASSERT_EQ(a.code, 0) << a.output;
  const RunResult b = run("--config " + out("a/manifest.json") + " --out-dir " + out("b") + " fit");
  ASSERT_EQ(b.code, 0) << b.output;
  EXPECT_EQ(slurp(dir_ / "a" / "model.bin"), slurp(dir_ / "b" / "model.bin"));
  EXPECT_EQ(slurp(dir_ / "a" / "model.json"), slurp(dir_ / "b" / "model.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.json"), slurp(dir_ / "b" / "metrics.json"));
}

TEST_F(Cli, SviFitRuns) {
  const RunResult r = run("--seed 2 --out-dir " + out("svi") +
                          " fit --likelihood matern32 --lik-param rho=0.8 --synth gp-regression --synth-n 200"
                          " --method svi --inducing 20 --batch 50 --epochs 5 --tol 0 --lengthscale 1,2 --synth-d 2");
  EXPECT_EQ(r.code, 0) << r.output;
  const auto model = autoconj::load_model(dir_ / "svi" / "model.json");
  EXPECT_EQ(model.method, "svi");
  EXPECT_EQ(model.inputs.rows(), 20);
  EXPECT_DOUBLE_EQ(model.kernel.lengthscales[1], 2.0);
}

TEST_F(Cli, IterationBudgetExitsTwo) {
  const RunResult r = run("--out-dir " + out("budget") +
                          " fit --likelihood logistic --synth two-blobs --synth-n 100 --max-iter 2");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "budget" / "model.json"));
}

TEST_F(Cli, SampleDiagnosePredict) {
  const RunResult s = run("--seed 2 --out-dir " + out("s") +
                          " sample --likelihood student-t --synth gp-regression --synth-n 25 --samples 200"
                          " --burn-in 20 --chains 2");
  ASSERT_EQ(s.code, 0) << s.output;
  const Eigen::MatrixXd chain = autoconj::read_numeric_csv(dir_ / "s" / "chain_0.csv");
  EXPECT_EQ(chain.rows(), 180);
  EXPECT_EQ(chain.cols(), 25);

  const RunResult d = run("--out-dir " + out("d") + " diagnose " + out("s/chain_0.csv") + " " + out("s/chain_1.csv"));
  ASSERT_EQ(d.code, 0) << d.output;
  const auto report = nlohmann::json::parse(slurp(dir_ / "d" / "diagnostics.json"));
  EXPECT_EQ(report.at("chains"), 2);
  EXPECT_EQ(report.at("scalars").size(), 4u);
  EXPECT_TRUE(std::isfinite(report.at("worst_rhat").get<double>()));

  const RunResult f = run("--seed 3 --out-dir " + out("f") +
                          " fit --likelihood logistic --synth two-blobs --synth-n 40");
  ASSERT_EQ(f.code, 0) << f.output;
  std::ofstream(dir_ / "test.csv") << "x0,x1,y\n0.5,0.7,1\n-1.2,-0.4,0\n-0.8,-1.1,0\n";
  const RunResult p = run("--out-dir " + out("p") + " predict --model " + out("f/model.json") + " --test " +
                          out("test.csv"));
  ASSERT_EQ(p.code, 0) << p.output;
  const auto metrics = nlohmann::json::parse(slurp(dir_ / "p" / "metrics.json"));
  EXPECT_EQ(metrics.at("n"), 3);
  EXPECT_TRUE(std::isfinite(metrics.at("nll").get<double>()));
  EXPECT_TRUE(fs::exists(dir_ / "p" / "predictions.csv"));
}

TEST_F(Cli, BenchmarkCheckpoints) {
  const RunResult r = run("--seed 4 --out-dir " + out("bench") +
                          " benchmark --likelihood logistic --synth two-blobs --synth-n 2000 --test-frac 0.2"
                          " --method svi --inducing 50 --epochs 30 --tol 0");
  ASSERT_EQ(r.code, 0) << r.output;
  const Eigen::MatrixXd rows = autoconj::read_numeric_csv(dir_ / "bench" / "benchmark.csv");
  ASSERT_GE(rows.rows(), 2);
  const double interval = 0.05;
  EXPECT_LE(rows(0, 0), 2.0 * interval);
  EXPECT_GE(rows(0, 0), interval);
  for (Eigen::Index i = 1; i < rows.rows(); ++i) EXPECT_GT(rows(i, 0), rows(i - 1, 0));
  EXPECT_TRUE(rows.col(2).allFinite());
}
