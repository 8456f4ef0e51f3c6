// Command-line front end: fit (cavi | svi), sample, diagnose, predict and benchmark.
//
// Exit codes: 0 success (fits: converged), 2 fit stopped at its iteration budget without
// converging (outputs are still written), 1 any error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "autoconj/autoconj.hpp"
#include "autoconj/io.hpp"

namespace fs = std::filesystem;
using namespace autoconj;

namespace {

// ---------------------------------------------------------------------------------------------
// JSON configuration files for CLI11. Top-level keys are global options, nested objects hold
// the options of a subcommand. A run manifest is accepted too: its "config" member is used.

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return collect(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("--config: invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("config") && j.value("tool", "") == "autoconj") j = j.at("config");
    if (!j.is_object()) throw CLI::ConfigError("--config: top level must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

  /// Resolved option values of an app and its parsed subcommands.
  static json collect(const CLI::App* app, bool default_also) {
    json out = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "help-all" || name == "config") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        if (opt->get_expected_min() == 0 && opt->get_type_size() == 0) {
          out[name] = true;
        } else if (res.size() == 1 && opt->get_items_expected_max() <= 1) {
          out[name] = res.front();
        } else {
          out[name] = res;
        }
      } else if (default_also && !opt->get_default_str().empty()) {
        std::string def = opt->get_default_str();
        if (def.size() >= 2 && def.front() == '[' && def.back() == ']') {
          json arr = json::array();
          std::istringstream in(def.substr(1, def.size() - 2));
          for (std::string item; std::getline(in, item, ',');) arr.push_back(detail::trim(item));
          out[name] = arr;
        } else {
          out[name] = def;
        }
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) out[sub->get_name()] = collect(sub, default_also);
    return out;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it->is_object()) {
        auto next = parents;
        next.push_back(it.key());
        flatten(*it, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      items.push_back(std::move(item));
    }
  }
};

// ---------------------------------------------------------------------------------------------
// Option groups shared by several subcommands.

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir = ".";
};

struct ModelOpts {
  std::string likelihood;
  std::vector<std::string> lik_params;
  double variance = 1.0;
  std::vector<double> lengthscales{1.0};
  double jitter = 1e-6;
  int laplace_terms = 64;
  double laplace_A = 18.4;
  double newton_tol = 1e-8;
  int newton_maxiter = 100;

  void add(CLI::App* app, bool require_likelihood = true) {
    auto* lik = app->add_option("--likelihood", likelihood,
                                "Likelihood family: student-t, laplace, logistic, bayesian-svm, matern32")
                    ->check(CLI::IsMember({"student-t", "laplace", "logistic", "bayesian-svm", "matern32"}));
    if (require_likelihood) lik->required();
    app->add_option("--lik-param", lik_params,
                    "Likelihood parameter key=value, repeatable (student-t: nu, sigma; laplace: beta; matern32: rho)");
    app->add_option("--variance", variance, "Kernel variance (> 0)")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lengthscale", lengthscales, "Kernel lengthscale; one value or comma-separated per feature (> 0)")
        ->delimiter(',')
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--jitter", jitter, "Initial diagonal jitter for Cholesky factorizations, in [0, 1e-2]")
        ->check(CLI::Range(0.0, 1e-2))
        ->capture_default_str();
    app->add_option("--laplace-terms", laplace_terms, "Terms of the inverse Laplace transform series, in [16, 4096]")
        ->check(CLI::Range(16, 4096))
        ->capture_default_str();
    app->add_option("--laplace-A", laplace_A, "Inverse Laplace transform discretization parameter, in [1, 60]")
        ->check(CLI::Range(1.0, 60.0))
        ->capture_default_str();
    app->add_option("--newton-tol", newton_tol, "Inverse-CDF Newton tolerance, in [1e-14, 1e-2]")
        ->check(CLI::Range(1e-14, 1e-2))
        ->capture_default_str();
    app->add_option("--newton-maxiter", newton_maxiter, "Inverse-CDF Newton iteration budget, in [1, 10000]")
        ->check(CLI::Range(1, 10000))
        ->capture_default_str();
  }

  Likelihood make_likelihood() const {
    Likelihood::Params params;
    for (const auto& kv : lik_params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConstraintError("--lik-param expects key=value, got '" + kv + "'");
      double v;
      if (!detail::parse_number(kv.substr(eq + 1), v)) {
        throw ConstraintError("--lik-param " + kv + ": value is not a finite number");
      }
      params[kv.substr(0, eq)] = v;
    }
    try {
      return Likelihood::make(likelihood, params);
    } catch (const ConstraintError& e) {
      throw ConstraintError(std::string("--lik-param: ") + e.what());
    }
  }

  KernelConfig kernel(Eigen::Index dims) const {
    KernelConfig cfg;
    cfg.variance = variance;
    cfg.lengthscales = Eigen::Map<const Eigen::VectorXd>(lengthscales.data(), static_cast<Eigen::Index>(lengthscales.size()));
    cfg.jitter = jitter;
    if (cfg.lengthscales.size() != 1 && cfg.lengthscales.size() != dims) {
      throw ConstraintError("--lengthscale: expected 1 or " + std::to_string(dims) + " values, got " +
                            std::to_string(cfg.lengthscales.size()));
    }
    return cfg;
  }

  BromwichConfig bromwich() const {
    BromwichConfig cfg;
    cfg.terms = laplace_terms;
    cfg.A = laplace_A;
    cfg.newton_tol = newton_tol;
    cfg.newton_max_iter = newton_maxiter;
    cfg.euler_depth = std::min(cfg.euler_depth, laplace_terms - 1);
    cfg.validate();
    return cfg;
  }
};

struct DataOpts {
  std::string data;
  std::string target = "last";
  std::string task;
  double test_frac = 0.0;
  std::string synth;
  long synth_n = 200;
  long synth_d = 2;

  void add(CLI::App* app, double default_test_frac) {
    test_frac = default_test_frac;
    app->add_option("--data", data, "Comma-separated data file (optional header row)")->check(CLI::ExistingFile);
    app->add_option("--target", target, "Target column: last, first, 0-based index or header name")->capture_default_str();
    app->add_option("--task", task, "regression or binary (default: implied by the likelihood)")
        ->check(CLI::IsMember({"regression", "binary"}));
    app->add_option("--test-frac", test_frac,
                    default_test_frac > 0 ? "Held-out fraction, in (0, 1)" : "Held-out fraction, in [0, 1); 0 disables the split")
        ->check(CLI::Range(0.0, 0.99))
        ->capture_default_str();
    app->add_option("--synth", synth, "Generate data instead of --data: gp-regression or two-blobs")
        ->check(CLI::IsMember({"gp-regression", "two-blobs"}));
    app->add_option("--synth-n", synth_n, "Rows of generated data, in [2, 10000]")->check(CLI::Range(2L, 10000L))->capture_default_str();
    app->add_option("--synth-d", synth_d, "Feature columns of generated data, in [1, 1000]")->check(CLI::Range(1L, 1000L))->capture_default_str();
  }
};

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
  json info;
};

LoadedData load_data(const DataOpts& d, const ModelOpts& m, const Likelihood& lik, std::uint64_t seed) {
  const Task implied = lik.support() == Support::binary ? Task::binary : Task::regression;
  const Task task = d.task.empty() ? implied : parse_task(d.task);
  if (task != implied) {
    throw ConstraintError("--task " + to_string(task) + " does not match likelihood '" + std::string(lik.name()) + "'");
  }
  if (d.data.empty() == d.synth.empty()) throw ConstraintError("exactly one of --data and --synth is required");

  Dataset full;
  json info;
  if (!d.data.empty()) {
    full = load_csv(d.data, d.target, task);
    info["source"] = d.data;
  } else {
    const SynthKind kind = parse_synth_kind(d.synth);
    if ((kind == SynthKind::two_blobs) != (task == Task::binary)) {
      throw ConstraintError("--synth " + d.synth + " does not match likelihood '" + std::string(lik.name()) + "'");
    }
    full = synth(kind, d.synth_n, d.synth_d, m.kernel(d.synth_d), lik, child_seed(seed, 100));
    info["source"] = "synth:" + d.synth;
  }
  for (const auto& w : full.warnings) std::cerr << "warning: " << w << '\n';
  info["fingerprint"] = fingerprint(full);
  info["n"] = full.size();
  info["d"] = full.dims();
  info["task"] = to_string(task);

  LoadedData out;
  if (d.test_frac > 0.0) {
    auto [train, test] = split(full, d.test_frac, child_seed(seed, 101));
    for (const auto& w : train.warnings) std::cerr << "warning: " << w << '\n';
    out.train = std::move(train);
    out.test = std::move(test);
    info["n_train"] = out.train.size();
    info["n_test"] = out.test->size();
  } else {
    out.train = std::move(full);
  }
  out.info = std::move(info);
  return out;
}

json metrics_json(const PredictiveSummary& s) {
  json j = {{"nll", s.nll}, {"n", s.log_density.size()}};
  if (s.task == Support::binary) {
    j["error_rate"] = s.error_rate;
    j["probabilities_calibrated"] = s.calibrated;
  } else {
    j["rmse"] = s.rmse;
  }
  return j;
}

void write_predictions(const fs::path& path, const PredictiveSummary& s, const Eigen::VectorXd& y) {
  const bool binary = s.task == Support::binary;
  Eigen::MatrixXd rows(y.size(), binary ? 6 : 5);
  rows.col(0) = y;
  rows.col(1) = s.latent_mean;
  rows.col(2) = s.latent_var;
  rows.col(3) = s.log_density;
  rows.col(4) = s.prediction;
  if (binary) rows.col(5) = s.prob_plus;
  std::vector<std::string> header{"y", "latent_mean", "latent_var", "log_density", "prediction"};
  if (binary) header.emplace_back("prob_plus");
  write_csv(path, header, rows);
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

json base_manifest(const CLI::App& app, const std::string& command, const GlobalOpts& g) {
  return {{"tool", "autoconj"},
          {"version", AUTOCONJ_VERSION},
          {"command", command},
          {"seed", g.seed},
          {"config", JsonConfig::collect(&app, true)}};
}

// ---------------------------------------------------------------------------------------------
// fit and benchmark

struct FitOpts {
  std::string method = "cavi";
  int max_iter = 200;
  double tol = 1e-6;
  long inducing = 200;
  long batch = 100;
  int epochs = 100;
  double lr_tau = 1.0;
  double lr_kappa = 0.51;
  double lr_fixed = -1.0;
  bool hyperopt = false;

  void add(CLI::App* app) {
    app->add_option("--method", method, "Inference method: cavi (full GP) or svi (inducing points)")
        ->check(CLI::IsMember({"cavi", "svi"}))
        ->capture_default_str();
    app->add_option("--max-iter", max_iter, "CAVI iteration budget, in [1, 1000000]")->check(CLI::Range(1, 1000000))->capture_default_str();
    app->add_option("--tol", tol, "Convergence tolerance on relative ELBO change and mean change, in (0, 1); svi: 0 runs all epochs")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_option("--inducing", inducing, "Inducing points for svi (k-means++), in [1, 100000]")->check(CLI::Range(1L, 100000L))->capture_default_str();
    app->add_option("--batch", batch, "Minibatch size for svi, in [1, 10000000]")->check(CLI::Range(1L, 10000000L))->capture_default_str();
    app->add_option("--epochs", epochs, "Epochs for svi, in [1, 1000000]")->check(CLI::Range(1, 1000000))->capture_default_str();
    app->add_option("--lr-tau", lr_tau, "Learning-rate delay tau in rho(t) = (t + tau)^-kappa, >= 0")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--lr-kappa", lr_kappa, "Learning-rate forgetting rate kappa, in (0.5, 1]")
        ->check(CLI::Validator(
            [](std::string& s) -> std::string {
              double v;
              if (!detail::parse_number(s, v) || !(v > 0.5 && v <= 1.0)) return "value " + s + " not in range (0.5, 1]";
              return "";
            },
            "(0.5, 1]"))
        ->capture_default_str();
    app->add_option("--lr-fixed", lr_fixed, "Constant svi step size in [0, 1] instead of the schedule (negative: off)")
        ->check(CLI::Range(-1.0, 1.0))
        ->capture_default_str();
    app->add_flag("--hyperopt", hyperopt, "svi: optimize kernel variance and lengthscales with ADAM");
  }
};

struct Checkpointer {
  double interval = 0.05;
  double ratio = 2.0;
  double next = 0.05;
  Eigen::MatrixXd rows = Eigen::MatrixXd(0, 4);

  void push(double seconds, double elbo, const PredictiveSummary& s) {
    const double metric = s.task == Support::binary ? s.error_rate : s.rmse;
    rows.conservativeResize(rows.rows() + 1, 4);
    rows.row(rows.rows() - 1) << seconds, elbo, s.nll, metric;
    while (next <= seconds) next *= ratio;
  }
  bool due(double seconds) const { return seconds >= next; }
  double last_seconds() const { return rows.rows() ? rows(rows.rows() - 1, 0) : -1.0; }
};

struct FitOutcome {
  bool converged = false;
  FitTrace trace;
  ModelFile model;
  std::optional<PredictiveSummary> test_summary;
};

FitOutcome run_fit(const FitOpts& f, const ModelOpts& m, const GlobalOpts& g, const Likelihood& lik,
                   const LoadedData& data, Checkpointer* ck) {
  const Dataset& tr = data.train;
  const KernelConfig kernel = m.kernel(tr.dims());
  FitOutcome out;
  out.model.method = f.method;
  out.model.likelihood = lik;
  out.model.task = tr.task;
  out.model.standardization = tr.standardization;

  if (f.method == "cavi") {
    const LatentPrior prior = LatentPrior::build(tr.X, kernel);
    CaviOptions opts;
    opts.max_iter = f.max_iter;
    opts.tol = f.tol > 0 ? f.tol : 1e-6;
    opts.seed = g.seed;
    if (ck) {
      opts.observer = [&](const CaviProgress& p) {
        if (ck->due(p.seconds)) {
          ck->push(p.seconds, p.elbo, evaluate(*p.posterior, prior, tr.X, kernel, data.test->X, data.test->y, lik));
        }
      };
    }
    CaviFit fit = fit_cavi(prior, tr.y, lik, opts);
    if (ck && fit.trace.entries.back().seconds > ck->last_seconds()) {
      ck->push(fit.trace.entries.back().seconds, fit.trace.entries.back().elbo,
               evaluate(fit.q, fit.prior, tr.X, kernel, data.test->X, data.test->y, lik));
    }
    if (data.test) out.test_summary = evaluate(fit.q, fit.prior, tr.X, kernel, data.test->X, data.test->y, lik);
    out.converged = fit.trace.converged;
    out.trace = std::move(fit.trace);
    out.model.kernel = kernel;
    out.model.inputs = tr.X;
    out.model.mean = fit.q.mean;
    out.model.cov = fit.q.cov;
    out.model.prior_mean = fit.q.prior_mean;
    return out;
  }

  SviOptions opts;
  opts.inducing = f.inducing;
  opts.batch = f.batch;
  if (opts.inducing > tr.size()) {
    std::cerr << "warning: --inducing " << opts.inducing << " exceeds n = " << tr.size() << "; using " << tr.size() << '\n';
    opts.inducing = tr.size();
  }
  if (opts.batch > tr.size()) {
    std::cerr << "warning: --batch " << opts.batch << " exceeds n = " << tr.size() << "; using " << tr.size() << '\n';
    opts.batch = tr.size();
  }
  opts.epochs = f.epochs;
  opts.tol = f.tol;
  opts.lr.tau = f.lr_tau;
  opts.lr.kappa = f.lr_kappa;
  if (f.lr_fixed >= 0.0) opts.lr.fixed = f.lr_fixed;
  opts.hyperopt = f.hyperopt;
  opts.seed = g.seed;
  if (ck) {
    opts.observer = [&](const SviProgress& p) {
      if (ck->due(p.seconds)) ck->push(p.seconds, p.elbo, evaluate(*p.model, data.test->X, data.test->y, lik));
    };
  }
  SviFit fit = fit_svi(tr.X, tr.y, lik, kernel, opts);
  if (ck && fit.trace.entries.back().seconds > ck->last_seconds()) {
    ck->push(fit.trace.entries.back().seconds, fit.trace.entries.back().elbo,
             evaluate(fit.model, data.test->X, data.test->y, lik));
  }
  if (data.test) out.test_summary = evaluate(fit.model, data.test->X, data.test->y, lik);
  out.converged = fit.trace.converged;
  out.trace = std::move(fit.trace);
  out.model.kernel = fit.model.kernel;
  out.model.inputs = fit.model.Z;
  out.model.mean = fit.model.mean;
  out.model.cov = fit.model.cov;
  out.model.prior_mean = fit.model.prior_mean;
  return out;
}

int cmd_fit(const CLI::App& app, const GlobalOpts& g, const ModelOpts& m, const DataOpts& d, const FitOpts& f) {
  Stopwatch sw;
  json timings;
  const Likelihood lik = m.make_likelihood();
  const LoadedData data = load_data(d, m, lik, g.seed);
  timings["load"] = sw.lap();
  FitOutcome out = run_fit(f, m, g, lik, data, nullptr);
  timings["fit"] = sw.lap();

  const fs::path dir(g.out_dir);
  save_model(dir, out.model);
  write_trace_csv(dir / "trace.csv", out.trace);
  if (out.test_summary) write_json(dir / "metrics.json", metrics_json(*out.test_summary));
  timings["write"] = sw.lap();

  const int code = out.converged ? 0 : 2;
  json manifest = base_manifest(app, "fit", g);
  manifest["dataset"] = data.info;
  manifest["timings"] = timings;
  manifest["converged"] = out.converged;
  manifest["iterations"] = out.trace.entries.back().iteration;
  manifest["final_elbo"] = out.trace.entries.back().elbo;
  manifest["exit_code"] = code;
  write_json(dir / "manifest.json", manifest);
  std::cout << "fit " << f.method << ": " << (out.converged ? "converged" : "not converged") << " after "
            << out.trace.entries.back().iteration << " iterations, ELBO " << format_double(out.trace.entries.back().elbo)
            << '\n';
  return code;
}

int cmd_benchmark(const CLI::App& app, const GlobalOpts& g, const ModelOpts& m, const DataOpts& d, const FitOpts& f,
                  double interval, double ratio) {
  if (!(d.test_frac > 0.0)) throw ConstraintError("--test-frac must lie in (0, 1) for benchmark");
  Stopwatch sw;
  json timings;
  const Likelihood lik = m.make_likelihood();
  const LoadedData data = load_data(d, m, lik, g.seed);
  timings["load"] = sw.lap();
  Checkpointer ck;
  ck.interval = interval;
  ck.ratio = ratio;
  ck.next = interval;
  FitOutcome out = run_fit(f, m, g, lik, data, &ck);
  timings["fit"] = sw.lap();

  const fs::path dir(g.out_dir);
  write_csv(dir / "benchmark.csv", {"seconds", "elbo", "nll", "metric"}, ck.rows);
  write_trace_csv(dir / "trace.csv", out.trace);
  timings["write"] = sw.lap();
  const int code = out.converged ? 0 : 2;
  json manifest = base_manifest(app, "benchmark", g);
  manifest["dataset"] = data.info;
  manifest["timings"] = timings;
  manifest["converged"] = out.converged;
  manifest["checkpoints"] = ck.rows.rows();
  manifest["metric"] = lik.support() == Support::binary ? "error_rate" : "rmse";
  manifest["exit_code"] = code;
  write_json(dir / "manifest.json", manifest);
  std::cout << "benchmark " << f.method << ": " << ck.rows.rows() << " checkpoints written to "
            << (dir / "benchmark.csv").string() << '\n';
  return code;
}

// ---------------------------------------------------------------------------------------------
// sample

struct SampleOpts {
  int chains = 5;
  int samples = 11000;
  int burn_in = 1000;
  int thin = 1;
  bool store_omega = false;

  void add(CLI::App* app) {
    app->add_option("--chains", chains, "Independent chains, in [1, 1000]")->check(CLI::Range(1, 1000))->capture_default_str();
    app->add_option("--samples", samples, "Total sweeps per chain including burn-in, in [2, 100000000]")
        ->check(CLI::Range(2, 100000000))
        ->capture_default_str();
    app->add_option("--burn-in", burn_in, "Discarded initial sweeps, in [0, samples)")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--thin", thin, "Keep every k-th sweep after burn-in, >= 1")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_flag("--store-omega", store_omega, "Also write the auxiliary-variable draws");
  }
};

int cmd_sample(const CLI::App& app, const GlobalOpts& g, const ModelOpts& m, const DataOpts& d, const SampleOpts& s) {
  if (s.samples <= s.burn_in) {
    throw ConstraintError("--samples (" + std::to_string(s.samples) + ") must exceed --burn-in (" +
                          std::to_string(s.burn_in) + ")");
  }
  Stopwatch sw;
  json timings;
  const Likelihood lik = m.make_likelihood();
  const LoadedData data = load_data(d, m, lik, g.seed);
  const Dataset& tr = data.train;
  if (tr.size() > 2000) {
    std::cerr << "warning: Gibbs sampling costs O(n^3) per sweep; n = " << tr.size() << " exceeds 2000\n";
  }
  timings["load"] = sw.lap();
  const KernelConfig kernel = m.kernel(tr.dims());
  const LatentPrior prior = LatentPrior::build(tr.X, kernel);
  GibbsOptions opts;
  opts.sweeps = s.samples;
  opts.chains = s.chains;
  opts.burn_in = s.burn_in;
  opts.thin = s.thin;
  opts.seed = g.seed;
  opts.bromwich = m.bromwich();
  opts.store_omega = s.store_omega;
  opts.threads = g.threads;
  const ChainStore store = run_gibbs(prior, tr.y, lik, opts);
  timings["sample"] = sw.lap();

  const fs::path dir(g.out_dir);
  json chains = json::array();
  for (std::size_t k = 0; k < store.chains(); ++k) {
    const std::string name = "chain_" + std::to_string(k) + ".csv";
    write_chain_csv(dir / name, store.f[k]);
    if (s.store_omega) write_csv(dir / ("omega_" + std::to_string(k) + ".csv"), {}, store.omega[k]);
    const auto& t = store.timings[k];
    chains.push_back({{"file", name},
                      {"seed", store.seeds[k]},
                      {"sweeps", t.sweeps},
                      {"seconds_f", t.f_seconds},
                      {"seconds_omega", t.omega_seconds},
                      {"seconds_total", t.total_seconds},
                      {"seconds_per_sample", t.seconds_per_sample()}});
  }
  timings["write"] = sw.lap();
  if (data.test) {
    const PredictiveSummary summary = evaluate(store, prior, tr.X, kernel, data.test->X, data.test->y, lik);
    write_json(dir / "metrics.json", metrics_json(summary));
    timings["predict"] = sw.lap();
  }
  json manifest = base_manifest(app, "sample", g);
  manifest["dataset"] = data.info;
  manifest["timings"] = timings;
  manifest["chains"] = chains;
  manifest["burn_in"] = store.burn_in;
  manifest["thin"] = store.thin;
  manifest["retained"] = store.samples();
  manifest["exit_code"] = 0;
  write_json(dir / "manifest.json", manifest);
  std::cout << "sample: " << store.chains() << " chains x " << store.samples() << " samples written to " << dir.string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------------------------
// diagnose

int cmd_diagnose(const CLI::App& app, const GlobalOpts& g, const std::vector<std::string>& files, int max_lag) {
  Stopwatch sw;
  ChainStore store;
  for (const auto& f : files) {
    store.f.push_back(read_numeric_csv(f));
    if (store.f.back().rows() != store.f.front().rows() || store.f.back().cols() != store.f.front().cols()) {
      throw DimensionError("chain file '" + f + "' has a different shape than '" + files.front() + "'");
    }
  }
  if (store.samples() <= max_lag + 1) {
    throw ConstraintError("--max-lag " + std::to_string(max_lag) + " needs chains longer than " + std::to_string(max_lag + 1) +
                          " samples");
  }
  const DiagnosticsReport rep = diagnose(monitored_scalars(store, g.seed), max_lag);

  json scalars = json::array();
  Eigen::MatrixXd ac(max_lag + 1, static_cast<Eigen::Index>(rep.scalars.size()) + 1);
  std::vector<std::string> header{"lag"};
  for (Eigen::Index k = 0; k <= max_lag; ++k) ac(k, 0) = static_cast<double>(k);
  for (std::size_t s = 0; s < rep.scalars.size(); ++s) {
    const auto& sc = rep.scalars[s];
    json js = {{"name", sc.name},
               {"lag1", max_lag >= 1 ? sc.autocorr[1] : 0.0},
               {"ess", sc.ess},
               {"autocorr", std::vector<double>(sc.autocorr.data(), sc.autocorr.data() + sc.autocorr.size())}};
    js["rhat"] = std::isnan(sc.rhat) ? json(nullptr) : json(sc.rhat);
    scalars.push_back(js);
    ac.col(static_cast<Eigen::Index>(s) + 1) = sc.autocorr;
    header.push_back(sc.name);
  }
  json report = {{"chains", store.chains()},
                 {"samples_per_chain", store.samples()},
                 {"dims", store.dims()},
                 {"max_lag", max_lag},
                 {"worst_lag1", rep.worst_lag1},
                 {"worst_rhat", std::isnan(rep.worst_rhat) ? json(nullptr) : json(rep.worst_rhat)},
                 {"min_ess", rep.min_ess},
                 {"scalars", scalars}};
  const fs::path dir(g.out_dir);
  write_json(dir / "diagnostics.json", report);
  write_csv(dir / "autocorr.csv", header, ac);
  json manifest = base_manifest(app, "diagnose", g);
  manifest["inputs"] = files;
  manifest["timings"] = {{"diagnose", sw.lap()}};
  manifest["exit_code"] = 0;
  write_json(dir / "manifest.json", manifest);
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------------------------
// predict

int cmd_predict(const CLI::App& app, const GlobalOpts& g, const std::string& model_path, const std::string& test_path,
                const std::string& target, int order) {
  Stopwatch sw;
  const ModelFile model = load_model(model_path);
  const Dataset raw = load_csv(test_path, target, model.task);
  const Eigen::MatrixXd Xtest = model.standardization.apply(raw.raw_features());
  const Likelihood& lik = model.likelihood;
  PredictiveSummary summary;
  if (model.method == "cavi") {
    const LatentPrior prior = LatentPrior::build(model.inputs, model.kernel, model.prior_mean);
    const GaussianPosterior q = GaussianPosterior::from_moments(model.mean, model.cov, model.prior_mean);
    summary = evaluate(q, prior, model.inputs, model.kernel, Xtest, raw.y, lik, order);
  } else if (model.method == "svi") {
    SparseModel sm = SparseModel::from_prior(model.inputs, model.kernel, model.prior_mean);
    sm.set_moments(model.mean, model.cov);
    summary = evaluate(sm, Xtest, raw.y, lik, order);
  } else {
    throw ConstraintError("--model: unknown method '" + model.method + "'");
  }
  const fs::path dir(g.out_dir);
  write_predictions(dir / "predictions.csv", summary, raw.y);
  const json metrics = metrics_json(summary);
  write_json(dir / "metrics.json", metrics);
  json manifest = base_manifest(app, "predict", g);
  manifest["dataset"] = {{"source", test_path}, {"fingerprint", fingerprint(raw)}, {"n", raw.size()}};
  manifest["timings"] = {{"predict", sw.lap()}};
  manifest["exit_code"] = 0;
  write_json(dir / "manifest.json", manifest);
  std::cout << metrics.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process inference with super-Gaussian likelihoods by auxiliary-variable augmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of option values (a run manifest also works); command-line flags take precedence");
  app.set_version_flag("--version", AUTOCONJ_VERSION);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Root random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads, 0 = all cores")->check(CLI::Range(0, 4096))->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();

  ModelOpts model_fit, model_bench, model_sample;
  DataOpts data_fit, data_bench, data_sample;
  FitOpts fit_opts, bench_opts;
  SampleOpts sample_opts;

  auto* fit = app.add_subcommand("fit", "Fit a variational posterior (CAVI on the full GP or SVI with inducing points)");
  model_fit.add(fit);
  data_fit.add(fit, 0.0);
  fit_opts.add(fit);

  auto* sample = app.add_subcommand("sample", "Draw posterior samples of the latent GP with the augmented Gibbs sampler");
  model_sample.add(sample);
  data_sample.add(sample, 0.0);
  sample_opts.add(sample);

  std::vector<std::string> chain_files;
  int max_lag = 20;
  auto* diag = app.add_subcommand("diagnose", "Autocorrelation, split R-hat and ESS of chain CSV files");
  diag->add_option("chains", chain_files, "Chain CSV files written by 'sample'")->required()->check(CLI::ExistingFile);
  diag->add_option("--max-lag", max_lag, "Largest autocorrelation lag, in [1, 100000]")->check(CLI::Range(1, 100000))->capture_default_str();

  std::string model_path, test_path, pred_target = "last";
  int order = 32;
  auto* pred = app.add_subcommand("predict", "Predictive metrics of a fitted model on a test file");
  pred->add_option("--model", model_path, "model.json written by 'fit'")->required()->check(CLI::ExistingFile);
  pred->add_option("--test", test_path, "Test data file (raw features; the model's standardization is applied)")
      ->required()
      ->check(CLI::ExistingFile);
  pred->add_option("--target", pred_target, "Target column: last, first, 0-based index or header name")->capture_default_str();
  pred->add_option("--order", order, "Gauss-Hermite order, in [1, 512]")->check(CLI::Range(1, 512))->capture_default_str();

  double ck_interval = 0.05, ck_ratio = 2.0;
  auto* bench = app.add_subcommand("benchmark", "Fit while recording test NLL and error/RMSE at geometric time checkpoints");
  model_bench.add(bench);
  data_bench.add(bench, 0.2);
  bench_opts.add(bench);
  bench->add_option("--checkpoint-interval", ck_interval, "First checkpoint time in seconds, > 0")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--checkpoint-ratio", ck_ratio, "Growth factor between checkpoints, in [1.01, 100]")
      ->check(CLI::Range(1.01, 100.0))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    if (app.get_subcommands().empty()) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    }
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (g.threads > 0) omp_set_num_threads(g.threads);
  Eigen::setNbThreads(g.threads > 0 ? g.threads : omp_get_max_threads());

  try {
    if (fit->parsed()) return cmd_fit(app, g, model_fit, data_fit, fit_opts);
    if (sample->parsed()) return cmd_sample(app, g, model_sample, data_sample, sample_opts);
    if (diag->parsed()) return cmd_diagnose(app, g, chain_files, max_lag);
    if (pred->parsed()) return cmd_predict(app, g, model_path, test_path, pred_target, order);
    if (bench->parsed()) return cmd_benchmark(app, g, model_bench, data_bench, bench_opts, ck_interval, ck_ratio);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
