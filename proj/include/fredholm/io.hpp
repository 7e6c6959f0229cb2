#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/numerics.hpp"
#include "fredholm/processes.hpp"

namespace fredholm {

/// Shortest decimal form that parses back to the identical double.  Every
/// file writer routes numbers through here, which is what makes repeated
/// runs of the same configuration byte-identical.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  // Tolerate surrounding spaces and a trailing carriage return.
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t'))
    text.remove_prefix(1);
  while (!text.empty() &&
         (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  double out = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw std::invalid_argument("parse_double: '" + std::string(text) +
                                "' is not a number");
  return out;
}

inline void write_matrix_csv(const std::filesystem::path& file,
                             const Eigen::MatrixXd& matrix) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open '" + file.string() + "' for writing");
  for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
    for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
      if (j) out << ',';
      out << format_double(matrix(i, j));
    }
    out << '\n';
  }
  if (!out)
    throw std::runtime_error("failed writing '" + file.string() + "'");
}

inline std::vector<std::vector<double>> read_csv_rows(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open '" + file.string() + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string::npos ? line.size() : comma;
      row.push_back(parse_double(std::string_view(line).substr(start, end - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& file) {
  const auto rows = read_csv_rows(file);
  if (rows.empty())
    throw std::invalid_argument("read_matrix_csv: '" + file.string() + "' is empty");
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd out(Eigen::Index(rows.size()), Eigen::Index(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols)
      throw std::invalid_argument("read_matrix_csv: ragged row in '" +
                                  file.string() + "'");
    for (std::size_t j = 0; j < cols; ++j)
      out(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  }
  return out;
}

inline nlohmann::ordered_json grid_to_json(const TimeGrid& grid) {
  nlohmann::ordered_json j;
  j["horizon"] = grid.horizon;
  j["rule"] = grid.rule == QuadratureRule::trapezoid ? "trapezoid" : "gauss-legendre";
  j["nodes"] = grid.nodes;
  j["weights"] = grid.weights;
  return j;
}

inline TimeGrid grid_from_json(const nlohmann::ordered_json& j) {
  TimeGrid grid;
  grid.horizon = j.at("horizon").get<double>();
  const std::string rule = j.at("rule").get<std::string>();
  if (rule == "trapezoid")
    grid.rule = QuadratureRule::trapezoid;
  else if (rule == "gauss-legendre")
    grid.rule = QuadratureRule::gauss_legendre;
  else
    throw std::invalid_argument("grid_from_json: unknown rule '" + rule + "'");
  grid.nodes = j.at("nodes").get<std::vector<double>>();
  grid.weights = j.at("weights").get<std::vector<double>>();
  grid.validate();
  return grid;
}

inline void write_json(const std::filesystem::path& file,
                       const nlohmann::ordered_json& j) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open '" + file.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out)
    throw std::runtime_error("failed writing '" + file.string() + "'");
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open '" + file.string() + "' for reading");
  return nlohmann::ordered_json::parse(in);
}

/// Kernel exchange format: <stem>.csv holds the value matrix, <stem>.json the
/// sidecar describing the grid, provenance, symmetry flag and the
/// factorization residual the producer measured.
inline void write_kernel(const FredholmKernel& kernel,
                         const std::filesystem::path& dir,
                         const std::string& stem, double residual) {
  write_matrix_csv(dir / (stem + ".csv"), kernel.values);
  nlohmann::ordered_json j;
  j["grid"] = grid_to_json(kernel.grid);
  j["provenance"] = kernel.provenance;
  j["symmetric"] = kernel.symmetric;
  j["residual"] = residual;
  write_json(dir / (stem + ".json"), j);
}

inline FredholmKernel read_kernel(const std::filesystem::path& dir,
                                  const std::string& stem) {
  const nlohmann::ordered_json j = read_json(dir / (stem + ".json"));
  FredholmKernel kernel;
  kernel.grid = grid_from_json(j.at("grid"));
  kernel.provenance = j.at("provenance").get<std::string>();
  kernel.symmetric = j.at("symmetric").get<bool>();
  kernel.values = read_matrix_csv(dir / (stem + ".csv"));
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  if (kernel.values.rows() != n || kernel.values.cols() != n)
    throw std::invalid_argument("read_kernel: matrix shape does not match the grid");
  return kernel;
}

/// Ensemble exchange format: <stem>.csv is paths x nodes, <stem>.json records
/// the seed, path count, kernel provenance and the grid.
inline void write_ensemble(const PathEnsemble& ensemble,
                           const std::filesystem::path& dir,
                           const std::string& stem) {
  write_matrix_csv(dir / (stem + ".csv"), ensemble.paths);
  nlohmann::ordered_json j;
  j["seed"] = ensemble.seed;
  j["n_paths"] = ensemble.n_paths();
  j["kernel_provenance"] = ensemble.kernel_provenance;
  j["grid"] = grid_to_json(ensemble.grid);
  write_json(dir / (stem + ".json"), j);
}

inline PathEnsemble read_ensemble(const std::filesystem::path& dir,
                                  const std::string& stem) {
  const nlohmann::ordered_json j = read_json(dir / (stem + ".json"));
  PathEnsemble ensemble;
  ensemble.seed = j.at("seed").get<std::uint64_t>();
  ensemble.kernel_provenance = j.at("kernel_provenance").get<std::string>();
  ensemble.grid = grid_from_json(j.at("grid"));
  ensemble.paths = read_matrix_csv(dir / (stem + ".csv"));
  if (ensemble.paths.cols() != static_cast<Eigen::Index>(ensemble.grid.size()))
    throw std::invalid_argument("read_ensemble: path width does not match the grid");
  if (ensemble.n_paths() != j.at("n_paths").get<std::size_t>())
    throw std::invalid_argument("read_ensemble: path count does not match the manifest");
  return ensemble;
}

/// Tabulated covariance input: first row lists the node times, the remaining
/// square block is R sampled at those times.  Symmetry is enforced by the
/// model constructor (1e-9 relative); the grid uses trapezoid weights on the
/// listed nodes and is the model's working grid.
struct TabulatedCovariance {
  CovarianceModel model;
  TimeGrid grid;
};

inline TabulatedCovariance read_covariance_table(
    const std::filesystem::path& file, bool rows_of_bounded_variation = false) {
  const auto rows = read_csv_rows(file);
  if (rows.size() < 3)
    throw std::invalid_argument(
        "read_covariance_csv: need a header row and at least a 2x2 matrix");
  const std::size_t n = rows.front().size();
  if (rows.size() != n + 1)
    throw std::invalid_argument(
        "read_covariance_csv: matrix must be square with one row per header time");
  const TimeGrid grid = make_trapezoid_grid(rows.front());
  const auto dim = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd values(dim, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i + 1].size() != n)
      throw std::invalid_argument("read_covariance_csv: ragged matrix row");
    for (std::size_t j = 0; j < n; ++j)
      values(Eigen::Index(i), Eigen::Index(j)) = rows[i + 1][j];
  }
  return {CovarianceModel::user_tabulated(grid, std::move(values),
                                          rows_of_bounded_variation),
          grid};
}

inline CovarianceModel read_covariance_csv(const std::filesystem::path& file,
                                           bool rows_of_bounded_variation = false) {
  return read_covariance_table(file, rows_of_bounded_variation).model;
}

}  // namespace fredholm
