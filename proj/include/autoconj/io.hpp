#pragma once

// Files written by the command-line tool: a fitted model as a JSON metadata file plus a binary
// payload of column-major little-endian doubles, sample chains and traces as CSV.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "autoconj/cavi.hpp"
#include "autoconj/dataio.hpp"
#include "autoconj/errors.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/likelihoods.hpp"

namespace autoconj {

using json = nlohmann::json;

inline json to_json(const KernelConfig& cfg) {
  return {{"variance", cfg.variance},
          {"lengthscales", std::vector<double>(cfg.lengthscales.data(), cfg.lengthscales.data() + cfg.lengthscales.size())},
          {"jitter", cfg.jitter}};
}

inline KernelConfig kernel_from_json(const json& j) {
  KernelConfig cfg;
  cfg.variance = j.at("variance").get<double>();
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  cfg.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  cfg.jitter = j.at("jitter").get<double>();
  return cfg;
}

inline json to_json(const Likelihood& lik) {
  return {{"name", std::string(lik.name())}, {"params", lik.hyperparams()}};
}

inline Likelihood likelihood_from_json(const json& j) {
  return Likelihood::make(j.at("name").get<std::string>(), j.at("params").get<Likelihood::Params>());
}

/// A fitted variational posterior: q over latent values at `inputs` (training inputs for the
/// full GP, inducing inputs for the sparse model).
struct ModelFile {
  std::string method;  ///< "cavi" or "svi"
  Likelihood likelihood = Likelihood::logistic();
  KernelConfig kernel;
  Task task = Task::regression;
  Standardization standardization;
  Eigen::MatrixXd inputs;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::VectorXd prior_mean;
};

namespace detail {

inline void check_little_endian() {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  if constexpr (std::endian::native != std::endian::little) {
    throw Error("model payloads are little-endian; big-endian hosts are not supported");
  }
}

}  // namespace detail

/// Writes <dir>/<stem>.json and <dir>/<stem>.bin.
inline void save_model(const std::filesystem::path& dir, const ModelFile& model, const std::string& stem = "model") {
  detail::check_little_endian();
  std::filesystem::create_directories(dir);
  const std::string bin_name = stem + ".bin";
  json blocks = json::array();
  std::ofstream bin(dir / bin_name, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write " + (dir / bin_name).string());
  std::uint64_t offset = 0;
  auto put = [&](const std::string& name, const Eigen::MatrixXd& m) {
    bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    blocks.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += sizeof(double) * static_cast<std::uint64_t>(m.size());
  };
  put("inputs", model.inputs);
  put("mean", model.mean);
  put("cov", model.cov);
  put("prior_mean", model.prior_mean);
  put("standardization_mean", model.standardization.mean);
  put("standardization_sd", model.standardization.sd);
  bin.close();

  json meta = {{"format", "autoconj-model"},
               {"format_version", 1},
               {"method", model.method},
               {"likelihood", to_json(model.likelihood)},
               {"kernel", to_json(model.kernel)},
               {"task", to_string(model.task)},
               {"payload", bin_name},
               {"encoding", "float64-le-column-major"},
               {"blocks", blocks}};
  std::ofstream js(dir / (stem + ".json"), std::ios::trunc);
  if (!js) throw Error("cannot write " + (dir / (stem + ".json")).string());
  js << meta.dump(2) << '\n';
}

inline ModelFile load_model(const std::filesystem::path& json_path) {
  detail::check_little_endian();
  std::ifstream js(json_path);
  if (!js) throw ConstraintError("cannot open model file '" + json_path.string() + "'");
  json meta;
  try {
    meta = json::parse(js);
  } catch (const json::exception& e) {
    throw ConstraintError("model file '" + json_path.string() + "' is not valid JSON: " + e.what());
  }
  if (meta.value("format", "") != "autoconj-model") throw ConstraintError("'" + json_path.string() + "' is not a model file");

  ModelFile model;
  model.method = meta.at("method").get<std::string>();
  model.likelihood = likelihood_from_json(meta.at("likelihood"));
  model.kernel = kernel_from_json(meta.at("kernel"));
  model.task = parse_task(meta.at("task").get<std::string>());

  const auto bin_path = json_path.parent_path() / meta.at("payload").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ConstraintError("cannot open model payload '" + bin_path.string() + "'");
  auto get = [&](const std::string& name) {
    for (const auto& b : meta.at("blocks")) {
      if (b.at("name") != name) continue;
      Eigen::MatrixXd m(b.at("rows").get<Eigen::Index>(), b.at("cols").get<Eigen::Index>());
      bin.seekg(static_cast<std::streamoff>(b.at("offset").get<std::uint64_t>()));
      bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
      if (!bin) throw ConstraintError("model payload '" + bin_path.string() + "' is truncated");
      return m;
    }
    throw ConstraintError("model file lacks block '" + name + "'");
  };
  model.inputs = get("inputs");
  model.mean = get("mean");
  model.cov = get("cov");
  model.prior_mean = get("prior_mean");
  model.standardization.mean = get("standardization_mean");
  model.standardization.sd = get("standardization_sd");
  return model;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// CSV with a header row and one row per matrix row, values printed with 17 significant digits.
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& rows) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  std::string line;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    line.clear();
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j) line += ',';
      line += format_double(rows(i, j));
    }
    out << line << '\n';
  }
}

inline void write_chain_csv(const std::filesystem::path& path, const Eigen::MatrixXd& samples) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) header.push_back("f_" + std::to_string(j + 1));
  write_csv(path, header, samples);
}

/// Numeric CSV with a single header row.
inline Eigen::MatrixXd read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConstraintError("cannot open '" + path.string() + "'");
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (first) {
      first = false;
      if (!detail::is_numeric_row(fields)) continue;
    }
    std::vector<double> row;
    for (const auto& f : fields) {
      double v;
      if (!detail::parse_number(f, v)) {
        throw DomainError("non-numeric value '" + f + "' on line " + std::to_string(line_no) + " of " + path.string());
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DimensionError("ragged row on line " + std::to_string(line_no) + " of " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DimensionError("'" + path.string() + "' has no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline void write_trace_csv(const std::filesystem::path& path, const FitTrace& trace) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(trace.entries.size()), 4);
  for (std::size_t k = 0; k < trace.entries.size(); ++k) {
    const auto& e = trace.entries[k];
    rows.row(static_cast<Eigen::Index>(k)) << e.iteration, e.elbo, e.delta, e.seconds;
  }
  write_csv(path, {"iteration", "elbo", "delta", "seconds"}, rows);
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace autoconj
