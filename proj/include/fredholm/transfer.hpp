#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fredholm/common.hpp"
#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/numerics.hpp"

namespace fredholm {

/// Scalar samples on the nodes of a grid.
struct GridFunction {
  TimeGrid grid;
  Eigen::VectorXd values;
};

/// Piecewise-constant function on [0, T) with breakpoints on grid nodes.
/// Piece i is the value on [b_i, b_{i+1}); the last node T is not covered by
/// any piece, and value_at_node(T) returns the final piece's value so that
/// quadrature against node samples sees the left limit.
class StepFunction {
 public:
  static StepFunction indicator(const TimeGrid& grid, double t) {
    const std::size_t idx = grid.index_of(t);
    const std::size_t last = grid.size() - 1;
    StepFunction f;
    f.grid_ = grid;
    if (idx == 0) {
      f.breakpoints_ = {0, last};
      f.values_ = {0.0};
    } else if (idx == last) {
      f.breakpoints_ = {0, last};
      f.values_ = {1.0};
    } else {
      f.breakpoints_ = {0, idx, last};
      f.values_ = {1.0, 0.0};
    }
    return f;
  }

  static StepFunction constant(const TimeGrid& grid, double value) {
    StepFunction f;
    f.grid_ = grid;
    f.breakpoints_ = {0, grid.size() - 1};
    f.values_ = {value};
    return f;
  }

  /// Pieces between consecutive breakpoint times; the breakpoints must be grid
  /// nodes, start at 0 and end at T so the pieces tile [0, T).
  static StepFunction from_pieces(const TimeGrid& grid,
                                  const std::vector<double>& breakpoint_times,
                                  std::vector<double> values) {
    if (breakpoint_times.size() < 2)
      throw std::invalid_argument("StepFunction: need at least two breakpoints");
    if (values.size() + 1 != breakpoint_times.size())
      throw std::invalid_argument("StepFunction: need one value per piece");
    StepFunction f;
    f.grid_ = grid;
    f.breakpoints_.reserve(breakpoint_times.size());
    for (double t : breakpoint_times) f.breakpoints_.push_back(grid.index_of(t));
    for (std::size_t i = 0; i + 1 < f.breakpoints_.size(); ++i)
      if (!(f.breakpoints_[i] < f.breakpoints_[i + 1]))
        throw std::invalid_argument("StepFunction: breakpoints must be increasing");
    if (f.breakpoints_.front() != 0 || f.breakpoints_.back() != grid.size() - 1)
      throw std::invalid_argument("StepFunction: pieces must tile [0, T)");
    f.values_ = std::move(values);
    return f;
  }

  const TimeGrid& grid() const { return grid_; }
  const std::vector<std::size_t>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& piece_values() const { return values_; }

  double value_at_node(std::size_t j) const {
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i)
      if (j < breakpoints_[i + 1]) return values_[i];
    return values_.back();
  }

  /// Samples at every grid node, left limit at T.
  std::vector<double> node_samples() const {
    std::vector<double> out(grid_.size());
    for (std::size_t j = 0; j < grid_.size(); ++j) out[j] = value_at_node(j);
    return out;
  }

  /// ell such that the pathwise integral of this function against a process is
  /// sum_j ell_j X(t_j); one telescoping contribution per breakpoint.
  Eigen::VectorXd increment_functional() const {
    Eigen::VectorXd ell = Eigen::VectorXd::Zero(Eigen::Index(grid_.size()));
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
      ell[Eigen::Index(breakpoints_[i + 1])] += values_[i];
      ell[Eigen::Index(breakpoints_[i])] -= values_[i];
    }
    return ell;
  }

 private:
  TimeGrid grid_;
  std::vector<std::size_t> breakpoints_;  // node indices, increasing, 0 .. n
  std::vector<double> values_;            // one per piece
};

/// Adjoint of the kernel's associated operator applied to a step function:
/// an indicator of [0, t) maps to the kernel row K(t, .), and general step
/// functions extend linearly through their telescoping representation
/// f = sum_i a_i (1_{[0, b_{i+1})} - 1_{[0, b_i)}).
inline GridFunction adjoint_apply(const FredholmKernel& kernel,
                                  const StepFunction& f) {
  if (!kernel.grid.same_nodes(f.grid()))
    throw std::invalid_argument("adjoint_apply: step function lives on a different grid");
  GridFunction out;
  out.grid = kernel.grid;
  out.values = Eigen::VectorXd::Zero(kernel.values.cols());
  const auto& bp = f.breakpoints();
  const auto& a = f.piece_values();
  for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
    if (a[i] == 0.0) continue;
    out.values += a[i] * (kernel.values.row(Eigen::Index(bp[i + 1])) -
                          kernel.values.row(Eigen::Index(bp[i])))
                             .transpose();
  }
  return out;
}

/// Coefficient vector c with X(f) = sum_j c_j sqrt(w_j) xi_j for i.i.d.
/// standard normal xi.  Identical to adjoint_apply; the separate name states
/// the simulation contract at call sites.
inline GridFunction wiener_coeffs(const FredholmKernel& kernel,
                                  const StepFunction& f) {
  return adjoint_apply(kernel, f);
}

inline double quadrature_inner(const TimeGrid& grid, const Eigen::VectorXd& a,
                               const Eigen::VectorXd& b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j)
    sum += grid.weights[j] * a[Eigen::Index(j)] * b[Eigen::Index(j)];
  return sum;
}

/// Inner product of step functions in the function space the process indexes,
/// computed through the kernel isometry: <f, g> = sum_j w_j (K*f)(s_j)
/// (K*g)(s_j).  On indicator pairs it reproduces the covariance up to the
/// kernel's factorization residual.
inline double ht_inner(const FredholmKernel& kernel, const StepFunction& f,
                       const StepFunction& g) {
  const GridFunction kf = adjoint_apply(kernel, f);
  const GridFunction kg = adjoint_apply(kernel, g);
  return quadrature_inner(kernel.grid, kf.values, kg.values);
}

/// Extended pairing <u 1_{[0,t)}, 1_{[0,anchor)}> = integral over [0, t] of
/// u(s) R(anchor, ds), a Stieltjes sum against the increments of
/// s -> R(anchor, s).  Defined only for models whose rows have bounded
/// variation; the condition is on the covariance, not the kernel, so the
/// model is queried directly.  `t` and `anchor` must be grid nodes.
inline double extended_inner_indicator(const CovarianceModel& model,
                                       const GridFunction& u, double t,
                                       double anchor) {
  if (!model.rows_of_bounded_variation())
    throw UnsupportedModel(
        "extended_inner_indicator: model does not declare rows of bounded variation");
  const TimeGrid& grid = u.grid;
  if (std::size_t(u.values.size()) != grid.size())
    throw std::invalid_argument("extended_inner_indicator: sample count must match the grid");
  if (anchor < 0.0 || anchor > model.horizon())
    throw std::domain_error("extended_inner_indicator: anchor outside [0, T]");
  const std::size_t stop = grid.index_of(t);
  if (stop == 0) return 0.0;
  std::vector<double> u_restricted(stop + 1), row_restricted(stop + 1);
  for (std::size_t i = 0; i <= stop; ++i) {
    u_restricted[i] = u.values[Eigen::Index(i)];
    row_restricted[i] = model(anchor, grid.nodes[i]);
  }
  return bv_stieltjes_integrate(u_restricted, row_restricted);
}

}  // namespace fredholm
