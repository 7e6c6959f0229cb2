#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include "fredholm/common.hpp"
#include "fredholm/covariance.hpp"
#include "fredholm/numerics.hpp"

namespace fredholm {

/// Spectral data of the covariance operator discretized with the grid
/// quadrature.  Solving the symmetric problem
///   W^{1/2} R W^{1/2} v = lambda v,   W = diag(weights),
/// and mapping back e = W^{-1/2} v gives eigenfunctions that are orthonormal
/// in the quadrature inner product sum_j w_j e_i(s_j) e_k(s_j); the pairs
/// (lambda_k, e_k) converge to the L^2([0,T]) eigenpairs of R.
struct MercerDecomposition {
  TimeGrid grid;
  Eigen::VectorXd eigenvalues;     // descending, clipped at clip_tol * lambda_1
  Eigen::MatrixXd eigenfunctions;  // column k = e_k sampled at the nodes
  double quadrature_trace = 0.0;
  double trace_fraction = 0.0;     // sum(eigenvalues) / quadrature_trace

  std::size_t rank() const { return std::size_t(eigenvalues.size()); }
};

inline MercerDecomposition mercer_decompose(const CovarianceModel& model,
                                            const TimeGrid& grid,
                                            double trace_fraction_target = 1.0 - 1e-10,
                                            double clip_tol = 1e-12) {
  grid.validate();
  if (!(trace_fraction_target > 0.0 && trace_fraction_target <= 1.0))
    throw std::invalid_argument("mercer_decompose: trace fraction target must be in (0, 1]");
  if (clip_tol < 0.0)
    throw std::invalid_argument("mercer_decompose: clip tolerance must be >= 0");

  const auto n = static_cast<Eigen::Index>(grid.size());
  const Eigen::MatrixXd R = gram(model, grid);
  Eigen::VectorXd sqrt_w(n);
  for (Eigen::Index j = 0; j < n; ++j) sqrt_w[j] = std::sqrt(grid.weights[std::size_t(j)]);

  Eigen::MatrixXd A = sqrt_w.asDiagonal() * R * sqrt_w.asDiagonal();
  A = ((A + A.transpose()) / 2.0).eval();
  const double quad_trace = A.trace();
  if (!(quad_trace > 0.0))
    throw DegenerateModel("mercer_decompose: quadrature trace of the model is zero");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(A);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("mercer_decompose: eigensolver did not converge");

  // Solver order is ascending; we want descending.
  const Eigen::VectorXd lambda = solver.eigenvalues().reverse();
  const double lambda_max = lambda[0];
  if (!(lambda_max > 0.0))
    throw DegenerateModel("mercer_decompose: no positive spectrum");
  if (lambda[n - 1] < -1e-10 * lambda_max)
    throw NotPositiveSemidefinite(
        "mercer_decompose: model Gram matrix has a negative eigenvalue beyond tolerance");

  const double clip = clip_tol * lambda_max;
  Eigen::Index kept = 0;
  while (kept < n && lambda[kept] > clip) ++kept;
  if (kept == 0)
    throw DegenerateModel("mercer_decompose: spectrum entirely below clip tolerance");

  // Smallest rank meeting the trace target; everything kept if it never does.
  Eigen::Index m = kept;
  double captured = 0.0;
  for (Eigen::Index k = 0; k < kept; ++k) {
    captured += lambda[k];
    if (captured >= trace_fraction_target * quad_trace) {
      m = k + 1;
      break;
    }
  }

  MercerDecomposition out;
  out.grid = grid;
  out.eigenvalues = lambda.head(m);
  out.eigenfunctions.resize(n, m);
  for (Eigen::Index k = 0; k < m; ++k)
    out.eigenfunctions.col(k) =
        solver.eigenvectors().col(n - 1 - k).cwiseQuotient(sqrt_w);
  out.quadrature_trace = quad_trace;
  out.trace_fraction = out.eigenvalues.sum() / quad_trace;
  return out;
}

/// Square-integrable kernel K(t, s) tabulated on a grid, with X_t realized as
/// the integral of K(t, .) against white noise.  `provenance` records how the
/// table was produced: "mercer" (symmetric square root of a covariance),
/// "closed-form" (catalog formula), or "derived" (transform of another
/// kernel).
struct FredholmKernel {
  TimeGrid grid;
  Eigen::MatrixXd values;  // values(i, j) = K(t_i, s_j)
  bool symmetric = false;
  std::string provenance;

  std::size_t size() const { return std::size_t(values.rows()); }
};

/// Symmetric kernel square root sum_k sqrt(lambda_k) e_k(t) e_k(s).  For a
/// full-rank decomposition the weighted reconstruction K W K recovers the Gram
/// matrix of the model exactly up to rounding, because W^{1/2} K W^{1/2} is
/// the matrix square root of W^{1/2} R W^{1/2}.
inline FredholmKernel build_fredholm_kernel(const MercerDecomposition& mercer) {
  FredholmKernel kernel;
  kernel.grid = mercer.grid;
  kernel.values = mercer.eigenfunctions *
                  mercer.eigenvalues.cwiseSqrt().asDiagonal() *
                  mercer.eigenfunctions.transpose();
  kernel.values = ((kernel.values + kernel.values.transpose()) / 2.0).eval();
  kernel.symmetric = true;
  kernel.provenance = "mercer";
  return kernel;
}

struct FactorizationResidual {
  double abs = 0.0;
  double rel = 0.0;
};

/// max_ij | sum_u K(t_i, u) K(t_j, u) w_u  -  R(t_i, t_j) |, the defect of the
/// kernel as a factorization of the covariance under the grid quadrature.
inline FactorizationResidual factorization_residual(const FredholmKernel& kernel,
                                                    const CovarianceModel& model) {
  const Eigen::MatrixXd R = gram(model, kernel.grid);
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(
      kernel.grid.weights.data(), Eigen::Index(kernel.grid.size()));
  const Eigen::MatrixXd recon =
      kernel.values * w.asDiagonal() * kernel.values.transpose();
  FactorizationResidual res;
  res.abs = (recon - R).cwiseAbs().maxCoeff();
  const double scale = R.cwiseAbs().maxCoeff();
  res.rel = scale > 0.0 ? res.abs / scale : res.abs;
  return res;
}

/// Catalog of closed-form kernels.  The time-indicator convention is
/// left-closed throughout: an indicator of [0, t) is 1 exactly when s < t, so
/// tabulated Volterra-type kernels vanish on the diagonal.
///
///   brownian-motion-indicator          K(t, s) = 1[s < t]
///   brownian-bridge-orthogonal         K(t, s) = 1[s < t] - t/T
///   brownian-bridge-canonical-volterra K(t, s) = (T-t)/(T-s) * 1[s < t]
///   degenerate-rank-one                K(t, s) = f(t) * 1[s < 1]   (T >= 1)
///
/// The degenerate entry exercises non-uniqueness: it reproduces the rank-one
/// covariance f(t) f(s) without being its symmetric square root.
inline FredholmKernel known_kernel(
    const std::string& name, const TimeGrid& grid,
    const std::function<double(double)>& profile = nullptr) {
  grid.validate();
  const auto n = static_cast<Eigen::Index>(grid.size());
  const double T = grid.horizon;
  FredholmKernel kernel;
  kernel.grid = grid;
  kernel.values.setZero(n, n);
  kernel.symmetric = false;
  kernel.provenance = "closed-form";

  const auto node = [&grid](Eigen::Index i) { return grid.nodes[std::size_t(i)]; };
  if (name == "brownian-motion-indicator") {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        kernel.values(i, j) = node(j) < node(i) ? 1.0 : 0.0;
  } else if (name == "brownian-bridge-orthogonal") {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        kernel.values(i, j) = (node(j) < node(i) ? 1.0 : 0.0) - node(i) / T;
  } else if (name == "brownian-bridge-canonical-volterra") {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (node(j) < node(i))
          kernel.values(i, j) = (T - node(i)) / (T - node(j));
  } else if (name == "degenerate-rank-one") {
    if (!profile)
      throw std::invalid_argument("known_kernel: degenerate-rank-one needs a profile");
    if (T < 1.0)
      throw std::invalid_argument(
          "known_kernel: degenerate-rank-one needs a horizon T >= 1");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double fi = profile(node(i));
      for (Eigen::Index j = 0; j < n; ++j)
        kernel.values(i, j) = node(j) < 1.0 ? fi : 0.0;
    }
  } else {
    throw std::invalid_argument("known_kernel: unknown kernel name '" + name + "'");
  }
  return kernel;
}

struct EquivalenceReport {
  double max_abs_diff = 0.0;
  bool pass = false;
};

/// Two kernels on the same grid induce the same process law exactly when
/// their weighted reconstructions K W K^T agree; this compares them entrywise.
inline EquivalenceReport unitary_equivalence_check(const FredholmKernel& a,
                                                   const FredholmKernel& b,
                                                   double tol) {
  if (!a.grid.same_nodes(b.grid))
    throw std::invalid_argument("unitary_equivalence_check: kernels use different grids");
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(
      a.grid.weights.data(), Eigen::Index(a.grid.size()));
  const Eigen::MatrixXd ra = a.values * w.asDiagonal() * a.values.transpose();
  const Eigen::MatrixXd rb = b.values * w.asDiagonal() * b.values.transpose();
  EquivalenceReport report;
  report.max_abs_diff = (ra - rb).cwiseAbs().maxCoeff();
  report.pass = report.max_abs_diff <= tol;
  return report;
}

}  // namespace fredholm
