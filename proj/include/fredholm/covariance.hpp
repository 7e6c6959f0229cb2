#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fredholm/common.hpp"
#include "fredholm/numerics.hpp"

namespace fredholm {

enum class CovarianceKind {
  brownian_motion,
  fractional_brownian,
  brownian_bridge,
  ornstein_uhlenbeck,
  rank_one,
  truncated_series,
  user_tabulated,
};

/// Covariance function R(t, s) of a centered Gaussian process on [0, T].
///
/// Every closed-form kind starts at zero (R(0, s) = 0).  The Ornstein-
/// Uhlenbeck kind is the zero-start stationary-drift process
///   R(t, s) = sigma^2 / (2 theta) * (exp(-theta|t-s|) - exp(-theta(t+s))),
/// whose variance at time t is sigma^2 (1 - exp(-2 theta t)) / (2 theta).
///
/// `rows_of_bounded_variation` declares that t -> R(t, s) has bounded
/// variation for every fixed s; the extended inner products in transfer.hpp
/// refuse models that do not declare it.
class CovarianceModel {
 public:
  static CovarianceModel brownian_motion(double T) {
    CovarianceModel m(CovarianceKind::brownian_motion, T, "brownian-motion");
    return m;
  }

  static CovarianceModel fractional_brownian(double T, double hurst) {
    if (!(hurst > 0.0 && hurst < 1.0))
      throw std::invalid_argument("fractional_brownian: Hurst index must be in (0, 1)");
    CovarianceModel m(CovarianceKind::fractional_brownian, T,
                      "fractional-brownian(H=" + std::to_string(hurst) + ")");
    m.hurst_ = hurst;
    return m;
  }

  static CovarianceModel brownian_bridge(double T) {
    return CovarianceModel(CovarianceKind::brownian_bridge, T, "brownian-bridge");
  }

  static CovarianceModel ornstein_uhlenbeck(double T, double theta, double sigma) {
    if (!(theta > 0.0))
      throw std::invalid_argument("ornstein_uhlenbeck: theta must be positive");
    if (!(sigma > 0.0))
      throw std::invalid_argument("ornstein_uhlenbeck: sigma must be positive");
    CovarianceModel m(CovarianceKind::ornstein_uhlenbeck, T,
                      "ornstein-uhlenbeck(theta=" + std::to_string(theta) +
                          ",sigma=" + std::to_string(sigma) + ")");
    m.theta_ = theta;
    m.sigma_ = sigma;
    return m;
  }

  /// R(t, s) = f(t) f(s) for a scalar profile f.
  static CovarianceModel rank_one(double T, std::function<double(double)> profile,
                                  const std::string& profile_name) {
    if (!profile) throw std::invalid_argument("rank_one: profile must be callable");
    CovarianceModel m(CovarianceKind::rank_one, T, "rank-one(f=" + profile_name + ")");
    m.profile_ = std::move(profile);
    return m;
  }

  /// Rank-one model whose profile is tabulated on a grid and linearly
  /// interpolated in between.
  static CovarianceModel rank_one_tabulated(const TimeGrid& grid,
                                            std::vector<double> profile_values) {
    grid.validate();
    if (profile_values.size() != grid.size())
      throw std::invalid_argument("rank_one_tabulated: value count must match the grid");
    auto nodes = std::make_shared<std::vector<double>>(grid.nodes);
    auto values = std::make_shared<std::vector<double>>(std::move(profile_values));
    return rank_one(
        grid.horizon,
        [nodes, values](double t) {
          return interp_linear(*nodes, *values, t);
        },
        "tabulated");
  }

  /// Finite-rank model sum_{k<=rank} e_k(t) e_k(s) built from the integrated
  /// half-integer cosine family
  ///   e_k(t) = sqrt(2/T) * T/((k-1/2) pi) * sin((k-1/2) pi t / T),
  /// i.e. the leading terms of the Brownian motion expansion.
  static CovarianceModel truncated_series(double T, unsigned rank) {
    if (rank == 0) throw std::invalid_argument("truncated_series: rank must be >= 1");
    CovarianceModel m(CovarianceKind::truncated_series, T,
                      "truncated-series(rank=" + std::to_string(rank) + ")");
    m.rank_ = rank;
    return m;
  }

  /// Covariance tabulated on a grid; off-grid queries interpolate bilinearly.
  /// The matrix must be symmetric to 1e-9 in relative terms.  Whether rows
  /// have bounded variation cannot be inferred from samples, so it is a
  /// declaration by the caller.
  static CovarianceModel user_tabulated(const TimeGrid& grid, Eigen::MatrixXd values,
                                        bool rows_of_bounded_variation = false) {
    grid.validate();
    const auto n = static_cast<Eigen::Index>(grid.size());
    if (values.rows() != n || values.cols() != n)
      throw std::invalid_argument("user_tabulated: matrix shape must match the grid");
    const double scale = values.cwiseAbs().maxCoeff();
    const double asym = (values - values.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-9 * std::max(scale, 1e-300))
      throw std::invalid_argument("user_tabulated: matrix is not symmetric to 1e-9");
    CovarianceModel m(CovarianceKind::user_tabulated, grid.horizon, "user-tabulated");
    m.tab_nodes_ = std::make_shared<std::vector<double>>(grid.nodes);
    m.tab_values_ = std::make_shared<Eigen::MatrixXd>(std::move(values));
    m.bv_rows_ = rows_of_bounded_variation;
    return m;
  }

  CovarianceKind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  const std::string& name() const { return name_; }
  bool rows_of_bounded_variation() const { return bv_rows_; }
  double hurst() const { return hurst_; }
  double theta() const { return theta_; }
  double sigma() const { return sigma_; }

  double operator()(double t, double s) const {
    if (t < 0.0 || s < 0.0 || t > horizon_ || s > horizon_)
      throw std::domain_error("CovarianceModel: query outside [0, T]^2");
    switch (kind_) {
      case CovarianceKind::brownian_motion:
        return std::min(t, s);
      case CovarianceKind::fractional_brownian: {
        const double h2 = 2.0 * hurst_;
        return 0.5 * (std::pow(t, h2) + std::pow(s, h2) -
                      std::pow(std::abs(t - s), h2));
      }
      case CovarianceKind::brownian_bridge:
        return std::min(t, s) - t * s / horizon_;
      case CovarianceKind::ornstein_uhlenbeck:
        return sigma_ * sigma_ / (2.0 * theta_) *
               (std::exp(-theta_ * std::abs(t - s)) - std::exp(-theta_ * (t + s)));
      case CovarianceKind::rank_one:
        return profile_(t) * profile_(s);
      case CovarianceKind::truncated_series: {
        double sum = 0.0;
        for (unsigned k = 1; k <= rank_; ++k)
          sum += series_term(k, t) * series_term(k, s);
        return sum;
      }
      case CovarianceKind::user_tabulated:
        return interp_bilinear(t, s);
    }
    throw std::logic_error("CovarianceModel: unknown kind");
  }

  /// k-th integrated cosine term of the truncated-series model.
  double series_term(unsigned k, double t) const {
    const double freq = (double(k) - 0.5) * M_PI / horizon_;
    return std::sqrt(2.0 / horizon_) / freq * std::sin(freq * t);
  }

 private:
  CovarianceModel(CovarianceKind kind, double T, std::string name)
      : kind_(kind), horizon_(T), name_(std::move(name)) {
    if (!(T > 0.0))
      throw std::invalid_argument("CovarianceModel: horizon must be positive");
  }

  static double interp_linear(const std::vector<double>& nodes,
                              const std::vector<double>& values, double t) {
    auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
    if (it == nodes.begin()) return values.front();
    if (it == nodes.end()) return values.back();
    const std::size_t hi = static_cast<std::size_t>(it - nodes.begin());
    const std::size_t lo = hi - 1;
    const double u = (t - nodes[lo]) / (nodes[hi] - nodes[lo]);
    return (1.0 - u) * values[lo] + u * values[hi];
  }

  double interp_bilinear(double t, double s) const {
    const auto& nodes = *tab_nodes_;
    const auto& v = *tab_values_;
    const auto cell = [&nodes](double x, std::size_t& lo, double& u) {
      auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
      if (it == nodes.begin()) { lo = 0; u = 0.0; return; }
      std::size_t hi = static_cast<std::size_t>(it - nodes.begin());
      if (hi == nodes.size()) { lo = nodes.size() - 2; u = 1.0; return; }
      lo = hi - 1;
      u = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
    };
    std::size_t i, j;
    double u, w;
    cell(t, i, u);
    cell(s, j, w);
    return (1.0 - u) * (1.0 - w) * v(i, j) + u * (1.0 - w) * v(i + 1, j) +
           (1.0 - u) * w * v(i, j + 1) + u * w * v(i + 1, j + 1);
  }

  CovarianceKind kind_;
  double horizon_;
  std::string name_;
  double hurst_ = 0.5;
  double theta_ = 1.0;
  double sigma_ = 1.0;
  std::function<double(double)> profile_;
  unsigned rank_ = 0;
  std::shared_ptr<std::vector<double>> tab_nodes_;
  std::shared_ptr<Eigen::MatrixXd> tab_values_;
  bool bv_rows_ = true;
};

/// Quadrature estimate of integral of R(t, t) dt, with a stability probe: the
/// estimate is flagged finite when recomputing on a refined grid moves it by
/// less than 1%.  This is the existence test for a square-integrable kernel
/// factorization, so callers gate work on `finite`.
struct TraceEstimate {
  double value = 0.0;
  double refined_value = 0.0;
  bool finite = false;
};

inline TraceEstimate trace(const CovarianceModel& model, const TimeGrid& grid) {
  const auto quad = [&model](const TimeGrid& g) {
    double sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      sum += g.weights[i] * model(g.nodes[i], g.nodes[i]);
    return sum;
  };
  TraceEstimate est;
  est.value = quad(grid);
  if (model.kind() == CovarianceKind::user_tabulated) {
    // A table is its own interpolant: refining only measures interpolation
    // curvature, and a bounded table always has a finite trace.
    est.refined_value = est.value;
    est.finite = std::isfinite(est.value);
    return est;
  }
  est.refined_value = quad(refine_grid(grid));
  const double scale = std::max(std::abs(est.value), std::abs(est.refined_value));
  est.finite = std::isfinite(est.value) && std::isfinite(est.refined_value) &&
               (scale == 0.0 ||
                std::abs(est.refined_value - est.value) < 0.01 * scale);
  return est;
}

/// Symmetric Gram matrix R(t_i, t_j) on the grid nodes.
inline Eigen::MatrixXd gram(const CovarianceModel& model, const TimeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) {
      const double v = model(grid.nodes[std::size_t(i)], grid.nodes[std::size_t(j)]);
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

struct PsdReport {
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  bool pass = false;
};

/// Eigenvalue check of a symmetric matrix: passes when the most negative
/// eigenvalue is within -tol * max_eigenvalue.
inline PsdReport check_psd(const Eigen::MatrixXd& matrix, double tol = 1e-10) {
  if (matrix.rows() != matrix.cols())
    throw std::invalid_argument("check_psd: matrix must be square");
  const double scale = matrix.cwiseAbs().maxCoeff();
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(scale, 1e-300))
    throw std::invalid_argument("check_psd: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix,
                                                        Eigen::EigenvaluesOnly);
  PsdReport report;
  report.min_eigenvalue = solver.eigenvalues().minCoeff();
  report.max_eigenvalue = solver.eigenvalues().maxCoeff();
  report.pass = report.min_eigenvalue >= -tol * report.max_eigenvalue;
  return report;
}

/// Increments of the variance function along the grid:
/// d_i = R(t_{i+1}, t_{i+1}) - R(t_i, t_i), one per cell.
inline std::vector<double> variance_increments(const CovarianceModel& model,
                                               const TimeGrid& grid) {
  std::vector<double> d(grid.size() - 1);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    d[i] = model(grid.nodes[i + 1], grid.nodes[i + 1]) -
           model(grid.nodes[i], grid.nodes[i]);
  return d;
}

}  // namespace fredholm
