#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autoconj/errors.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/random.hpp"

namespace autoconj {

enum class Task { regression, binary };

inline std::string to_string(Task t) { return t == Task::binary ? "binary" : "regression"; }

inline Task parse_task(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "binary" || s == "classification") return Task::binary;
  throw ConstraintError("--task must be 'regression' or 'binary', got '" + s + "'");
}

/// Column-wise affine map raw -> (raw - mean) / sd.
struct Standardization {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;

  static Standardization identity(Eigen::Index d) {
    return {Eigen::RowVectorXd::Zero(d), Eigen::RowVectorXd::Ones(d)};
  }

  /// Population (1/n) convention. Constant columns get sd = 1; their indices are appended
  /// to `constant_columns` when given.
  static Standardization fit(const Eigen::MatrixXd& raw, std::vector<Eigen::Index>* constant_columns = nullptr) {
    if (raw.rows() < 1) throw DimensionError("cannot standardize an empty matrix");
    Standardization s;
    s.mean = raw.colwise().mean();
    s.sd = ((raw.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(raw.rows())).sqrt();
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      if (!(s.sd[j] > 0.0)) {
        s.sd[j] = 1.0;
        if (constant_columns) constant_columns->push_back(j);
      }
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const {
    if (raw.cols() != mean.size()) throw DimensionError("standardization: column count mismatch");
    return (raw.rowwise() - mean).array().rowwise() / sd.array();
  }
  Eigen::MatrixXd invert(const Eigen::MatrixXd& standardized) const {
    if (standardized.cols() != mean.size()) throw DimensionError("standardization: column count mismatch");
    return (standardized.array().rowwise() * sd.array()).rowwise() + mean.array();
  }
};

struct Dataset {
  Eigen::MatrixXd X;  ///< standardized features
  Eigen::VectorXd y;
  Task task = Task::regression;
  Standardization standardization;
  std::vector<std::string> feature_names;
  std::string target_name;
  std::vector<std::string> warnings;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index dims() const { return X.cols(); }
  Eigen::MatrixXd raw_features() const { return standardization.invert(X); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Parse a numeric field. Empty, NA and NaN fields count as missing.
inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "na" || lower == "nan" || lower == "null" || lower == "?") return false;
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

inline bool is_numeric_row(const std::vector<std::string>& fields) {
  for (const auto& f : fields) {
    double v;
    if (!f.empty() && !parse_number(f, v)) {
      std::string lower(f);
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      if (lower != "na" && lower != "nan" && lower != "null" && lower != "?") return false;
    }
  }
  return true;
}

}  // namespace detail

/// Map binary labels to {-1, +1}. Accepts {0, 1} and {-1, +1}.
inline Eigen::VectorXd to_signed_labels(const Eigen::VectorXd& labels) {
  Eigen::VectorXd out(labels.size());
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (v == 1.0) out[i] = 1.0;
    else if (v == 0.0 || v == -1.0) out[i] = -1.0;
    else throw DomainError("binary target at row " + std::to_string(i + 1) + " is " + std::to_string(v) +
                           "; expected 0/1 or -1/+1");
  }
  return out;
}

/// Read a comma-delimited numeric file. `target` is "last", "first", a 0-based column index
/// or a header name.
inline Dataset load_csv(const std::string& path, const std::string& target = "last", Task task = Task::regression) {
  std::ifstream in(path);
  if (!in) throw ConstraintError("cannot open data file '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (rows.empty() && header.empty() && !detail::is_numeric_row(fields)) {
      header = std::move(fields);
      continue;
    }
    rows.push_back(std::move(fields));
    line_numbers.push_back(line_no);
  }
  if (rows.empty()) throw DimensionError("data file '" + path + "' has no data rows");
  const std::size_t cols = header.empty() ? rows.front().size() : header.size();
  if (cols < 2) throw DimensionError("data file needs at least one feature column and a target column");

  std::size_t tcol = cols - 1;
  if (target == "last") {
    tcol = cols - 1;
  } else if (target == "first") {
    tcol = 0;
  } else if (auto it = std::find(header.begin(), header.end(), target); it != header.end()) {
    tcol = static_cast<std::size_t>(it - header.begin());
  } else {
    double idx;
    if (!detail::parse_number(target, idx) || idx < 0 || idx >= static_cast<double>(cols) || idx != std::floor(idx)) {
      throw ConstraintError("--target must be 'last', 'first', a column name or an index in [0, " +
                            std::to_string(cols - 1) + "], got '" + target + "'");
    }
    tcol = static_cast<std::size_t>(idx);
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(cols - 1);
  Eigen::MatrixXd raw(n, d);
  Eigen::VectorXd y(n);
  std::vector<std::size_t> bad_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    bool ok = r.size() == cols;
    for (std::size_t j = 0, c = 0; ok && j < cols; ++j) {
      double v;
      if (!detail::parse_number(r[j], v)) {
        ok = false;
        break;
      }
      if (j == tcol) y[i] = v;
      else raw(i, static_cast<Eigen::Index>(c++)) = v;
    }
    if (!ok) bad_rows.push_back(line_numbers[static_cast<std::size_t>(i)]);
  }
  if (!bad_rows.empty()) {
    std::ostringstream msg;
    msg << "missing or non-numeric values on line";
    msg << (bad_rows.size() > 1 ? "s " : " ");
    for (std::size_t k = 0; k < bad_rows.size() && k < 20; ++k) msg << (k ? ", " : "") << bad_rows[k];
    if (bad_rows.size() > 20) msg << " (and " << bad_rows.size() - 20 << " more)";
    msg << " of '" << path << "'";
    throw DomainError(msg.str());
  }

  Dataset ds;
  ds.task = task;
  ds.y = task == Task::binary ? to_signed_labels(y) : y;
  std::vector<Eigen::Index> constant;
  ds.standardization = Standardization::fit(raw, &constant);
  ds.X = ds.standardization.apply(raw);
  for (std::size_t j = 0; j < cols; ++j) {
    std::string name = header.empty() ? "x" + std::to_string(j) : header[j];
    if (j == tcol) ds.target_name = header.empty() ? "y" : name;
    else ds.feature_names.push_back(std::move(name));
  }
  for (Eigen::Index j : constant) {
    ds.warnings.push_back("feature column '" + ds.feature_names[static_cast<std::size_t>(j)] +
                          "' is constant; its scale was set to 1");
  }
  return ds;
}

/// Shuffled train/test split. Standardization is refitted on the training rows and applied
/// to the test rows.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConstraintError("--test-frac must lie in (0, 1), got " + std::to_string(test_fraction));
  }
  const Eigen::Index n = ds.size();
  const auto n_test = static_cast<Eigen::Index>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test < 1 || n_test >= n) {
    throw ConstraintError("--test-frac " + std::to_string(test_fraction) + " leaves an empty train or test set for n = " +
                          std::to_string(n));
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Eigen::MatrixXd raw = ds.raw_features();

  auto take = [&](Eigen::Index from, Eigen::Index count) {
    Dataset part;
    part.task = ds.task;
    part.feature_names = ds.feature_names;
    part.target_name = ds.target_name;
    part.X.resize(count, raw.cols());
    part.y.resize(count);
    for (Eigen::Index k = 0; k < count; ++k) {
      part.X.row(k) = raw.row(idx[static_cast<std::size_t>(from + k)]);
      part.y[k] = ds.y[idx[static_cast<std::size_t>(from + k)]];
    }
    return part;
  };
  Dataset test = take(0, n_test);
  Dataset train = take(n_test, n - n_test);
  std::vector<Eigen::Index> constant;
  train.standardization = Standardization::fit(train.X, &constant);
  for (Eigen::Index j : constant) {
    train.warnings.push_back("feature column " + std::to_string(j) + " is constant on the training split");
  }
  train.X = train.standardization.apply(train.X);
  test.standardization = train.standardization;
  test.X = test.standardization.apply(test.X);
  return {std::move(train), std::move(test)};
}

enum class SynthKind { gp_regression, two_blobs };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "gp-regression") return SynthKind::gp_regression;
  if (s == "two-blobs" || s == "two-blobs-classification") return SynthKind::two_blobs;
  throw ConstraintError("synthetic kind must be 'gp-regression' or 'two-blobs', got '" + s + "'");
}

inline constexpr Eigen::Index kMaxSynthRows = 10000;

/// Synthetic data. gp-regression: x ~ N(0, I), f ~ N(0, K), y_i ~ p(y | f_i). two-blobs: labels
/// +-1 with equal probability, x ~ N(y * mu, I) with |mu| = 1 along the diagonal direction.
/// Features are returned as drawn, with an identity standardization record.
template <SuperGaussian L>
Dataset synth(SynthKind kind, Eigen::Index n, Eigen::Index d, const KernelConfig& kernel, const L& lik,
              std::uint64_t seed) {
  if (n < 1 || d < 1) throw ConstraintError("synthetic data needs n >= 1 and d >= 1");
  if (n > kMaxSynthRows) throw ConstraintError("synthetic data is limited to n <= 10000 rows");
  Rng rng(seed);
  Dataset ds;
  ds.X.resize(n, d);
  ds.y.resize(n);
  if (kind == SynthKind::gp_regression) {
    if (lik.support() != Support::regression) throw ConstraintError("gp-regression data needs a regression likelihood");
    ds.task = Task::regression;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) ds.X(i, j) = standard_normal(rng);
    const CholeskyFactor fac = chol_jitter(gram(ds.X, kernel), kernel.jitter);
    const Eigen::VectorXd f = fac.lower() * standard_normal_vector(n, rng);
    for (Eigen::Index i = 0; i < n; ++i) ds.y[i] = lik.sample_target(f[i], rng);
  } else {
    ds.task = Task::binary;
    const double shift = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = 0; i < n; ++i) {
      ds.y[i] = uniform_open(rng) < 0.5 ? 1.0 : -1.0;
      for (Eigen::Index j = 0; j < d; ++j) ds.X(i, j) = ds.y[i] * shift + standard_normal(rng);
    }
  }
  ds.standardization = Standardization::identity(d);
  for (Eigen::Index j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  ds.target_name = "y";
  return ds;
}

/// 64-bit FNV-1a hash of the dataset contents, as 16 hex digits.
inline std::string fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < bytes; ++k) {
      h ^= p[k];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t shape[3] = {ds.X.rows(), ds.X.cols(), ds.task == Task::binary ? 1 : 0};
  feed(shape, sizeof(shape));
  const Eigen::MatrixXd raw = ds.raw_features();
  feed(raw.data(), sizeof(double) * static_cast<std::size_t>(raw.size()));
  feed(ds.y.data(), sizeof(double) * static_cast<std::size_t>(ds.y.size()));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace autoconj
