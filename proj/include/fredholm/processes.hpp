#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fredholm/common.hpp"
#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/numerics.hpp"
#include "fredholm/parallel.hpp"
#include "fredholm/rng.hpp"
#include "fredholm/transfer.hpp"

namespace fredholm {

/// Sampled paths, one row per path.  Path p is a deterministic function of
/// (seed, p), so the ensemble is reproducible regardless of how the path loop
/// was scheduled.
struct PathEnsemble {
  TimeGrid grid;
  Eigen::MatrixXd paths;  // n_paths x grid.size()
  std::uint64_t seed = 0;
  std::string kernel_provenance;

  std::size_t n_paths() const { return std::size_t(paths.rows()); }
};

/// X_p(t_i) = sum_j K(t_i, s_j) sqrt(w_j) xi_j^(p).  Paths are generated in
/// fixed 256-path panels so the multiplication runs as a matrix product.
inline PathEnsemble simulate(const FredholmKernel& kernel, std::size_t n_paths,
                             std::uint64_t seed) {
  if (n_paths == 0) throw std::invalid_argument("simulate: need at least one path");
  const TimeGrid& grid = kernel.grid;
  const auto n = static_cast<Eigen::Index>(grid.size());

  Eigen::VectorXd sqrt_w(n);
  for (Eigen::Index j = 0; j < n; ++j)
    sqrt_w[j] = std::sqrt(grid.weights[std::size_t(j)]);
  const Eigen::MatrixXd path_map = kernel.values * sqrt_w.asDiagonal();

  PathEnsemble out;
  out.grid = grid;
  out.seed = seed;
  out.kernel_provenance = kernel.provenance;
  out.paths.resize(Eigen::Index(n_paths), n);

  const std::size_t panel = 256;
  parallel_for_blocks(n_paths, panel, [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd noise(n, Eigen::Index(end - begin));
    for (std::size_t p = begin; p < end; ++p) {
      const NoiseVector nv = gaussian_noise(grid.size(), seed, p);
      for (Eigen::Index j = 0; j < n; ++j)
        noise(j, Eigen::Index(p - begin)) = nv.values[std::size_t(j)];
    }
    out.paths.middleRows(Eigen::Index(begin), Eigen::Index(end - begin)).noalias() =
        (path_map * noise).transpose();
  });
  return out;
}

/// Lower-triangular (diagonal inclusive) perturbation table ell(s_i, u_j).
struct VolterraKernel {
  TimeGrid grid;
  Eigen::MatrixXd values;
};

inline VolterraKernel make_volterra(const TimeGrid& grid,
                                    const std::function<double(double, double)>& ell) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  VolterraKernel out;
  out.grid = grid;
  out.values = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      out.values(i, j) = ell(grid.nodes[std::size_t(i)], grid.nodes[std::size_t(j)]);
  return out;
}

/// ell(s, u) = theta e^{-theta (s - u)}, the kernel whose perturbation turns a
/// driving noise into its Langevin response.
inline VolterraKernel exponential_volterra(const TimeGrid& grid, double theta) {
  if (!(theta > 0.0))
    throw std::invalid_argument("exponential_volterra: theta must be positive");
  return make_volterra(grid, [theta](double s, double u) {
    return theta * std::exp(-theta * (s - u));
  });
}

/// K~(t, s) = K(t, s) - int_s^T K(t, u) ell(u, s) du.
///
/// The u-integral is taken cell by cell with K frozen at the left node and
/// ell averaged across the cell.  For kernels that are step functions in the
/// second argument with jumps at the nodes (every indicator kernel in the
/// catalog) the K factor is then represented without error, so the only
/// quadrature error left is the trapezoid error of the smooth ell.  A plain
/// trapezoid rule on the product would lose half the jump cell instead.
inline FredholmKernel volterra_perturb(const FredholmKernel& kernel,
                                       const VolterraKernel& ell) {
  if (!kernel.grid.same_nodes(ell.grid))
    throw std::invalid_argument("volterra_perturb: kernel and perturbation grids differ");
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  const auto& nodes = kernel.grid.nodes;

  Eigen::MatrixXd cell(n, n);
  cell.setZero();
  for (Eigen::Index j = 0; j + 1 < n; ++j) {
    const double du = nodes[std::size_t(j) + 1] - nodes[std::size_t(j)];
    for (Eigen::Index k = 0; k <= j; ++k)
      cell(j, k) = 0.5 * (ell.values(j, k) + ell.values(j + 1, k)) * du;
  }

  FredholmKernel out;
  out.grid = kernel.grid;
  out.symmetric = false;
  out.provenance = "derived";
  out.values = kernel.values - kernel.values * cell;
  return out;
}

/// Kernel of the stationary-force response Y_t = X_t - theta int_0^t
/// e^{-theta (t - s)} X_s ds:
///   K_theta(t, u) = K(t, u) - theta int_0^t e^{-theta (t - s)} K(s, u) ds.
///
/// The s-integral freezes K at the right node of each cell, where the
/// exponential factor integrates in closed form.  Indicator kernels are step
/// functions in s that are constant on each half-open cell (u, u + h], so the
/// right-node value is the exact cell value and the node-aligned jump costs
/// nothing; for smooth kernels the freezing is first order, which the
/// catalog's use of this operator never relies on.
inline FredholmKernel langevin_kernel(const FredholmKernel& kernel, double theta) {
  if (!(theta > 0.0))
    throw std::invalid_argument("langevin_kernel: theta must be positive");
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  const auto& nodes = kernel.grid.nodes;

  Eigen::MatrixXd decay(n, n);
  decay.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = nodes[std::size_t(i)];
    for (Eigen::Index m = 1; m <= i; ++m)
      decay(i, m) = std::exp(-theta * (t - nodes[std::size_t(m)])) -
                    std::exp(-theta * (t - nodes[std::size_t(m) - 1]));
  }

  FredholmKernel out;
  out.grid = kernel.grid;
  out.symmetric = false;
  out.provenance = "derived";
  out.values = kernel.values - decay * kernel.values;
  return out;
}

/// Euler cross-check for the Langevin response: Y_0 = 0,
///   Y_{i+1} = Y_i - theta Y_i dt_i + (X_{i+1} - X_i),
/// driven by paths of X simulated through the given kernel with the same
/// (seed, path index) streams the exact simulator would use.
inline PathEnsemble langevin_simulate_euler(const FredholmKernel& driver,
                                            double theta, std::size_t n_paths,
                                            std::uint64_t seed) {
  if (!(theta > 0.0))
    throw std::invalid_argument("langevin_simulate_euler: theta must be positive");
  PathEnsemble ensemble = simulate(driver, n_paths, seed);
  const auto n = static_cast<Eigen::Index>(ensemble.grid.size());
  const auto& nodes = ensemble.grid.nodes;
  for (Eigen::Index p = 0; p < ensemble.paths.rows(); ++p) {
    auto row = ensemble.paths.row(p);
    double y = 0.0;
    double x_prev = row[0];
    row[0] = 0.0;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      const double dt = nodes[std::size_t(i) + 1] - nodes[std::size_t(i)];
      const double x_next = row[i + 1];
      y += -theta * y * dt + (x_next - x_prev);
      x_prev = x_next;
      row[i + 1] = y;
    }
  }
  ensemble.kernel_provenance = "euler";
  return ensemble;
}

/// Leading columns a_j(t_i) = sum_k w_k phi_j(s_k) K(t_i, s_k) of a series
/// expansion of the process in an orthonormal basis.
struct SeriesExpansion {
  TimeGrid grid;
  std::string basis;
  Eigen::MatrixXd functions;  // grid.size() x m
};

namespace detail {

/// Orthonormalizes columns in the quadrature inner product (modified
/// Gram-Schmidt, two passes).  Collapsing columns mean the requested family
/// is dependent on this grid.
inline void orthonormalize_columns(const TimeGrid& grid, Eigen::MatrixXd& phi,
                                   const std::string& basis) {
  const auto n = phi.rows();
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = grid.weights[std::size_t(j)];
  for (Eigen::Index c = 0; c < phi.cols(); ++c) {
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index b = 0; b < c; ++b) {
        const double proj = (phi.col(b).array() * w.array() * phi.col(c).array()).sum();
        phi.col(c) -= proj * phi.col(b);
      }
    const double norm2 = (phi.col(c).array().square() * w.array()).sum();
    if (!(norm2 > 1e-20))
      throw InvalidBasis("series basis '" + basis +
                         "' is linearly dependent under the grid quadrature");
    phi.col(c) /= std::sqrt(norm2);
  }
}

inline Eigen::MatrixXd trigonometric_basis(const TimeGrid& grid, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const double T = grid.horizon;
  Eigen::MatrixXd phi(n, Eigen::Index(m));
  for (std::size_t j = 0; j < m; ++j) {
    const double freq = (double(j) + 0.5) * M_PI / T;
    for (Eigen::Index i = 0; i < n; ++i)
      phi(i, Eigen::Index(j)) =
          std::sqrt(2.0 / T) * std::cos(freq * grid.nodes[std::size_t(i)]);
  }
  return phi;
}

inline Eigen::MatrixXd haar_basis(const TimeGrid& grid, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const double T = grid.horizon;
  Eigen::MatrixXd phi(n, Eigen::Index(m));
  for (std::size_t j = 0; j < m; ++j) {
    if (j == 0) {
      phi.col(0).setConstant(1.0 / std::sqrt(T));
      continue;
    }
    // j = 2^level + shift indexes the wavelet on [shift, shift + 1] / 2^level.
    std::size_t level = 0;
    while ((std::size_t(2) << level) <= j) ++level;
    const std::size_t shift = j - (std::size_t(1) << level);
    const double scale = double(std::size_t(1) << level);
    const double lo = T * double(shift) / scale;
    const double mid = T * (double(shift) + 0.5) / scale;
    const double hi = T * (double(shift) + 1.0) / scale;
    const double amp = std::sqrt(scale / T);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = grid.nodes[std::size_t(i)];
      double v = 0.0;
      if (t >= lo && t < mid)
        v = amp;
      else if (t >= mid && t < hi)
        v = -amp;
      phi(i, Eigen::Index(j)) = v;
    }
  }
  return phi;
}

inline Eigen::MatrixXd mercer_eigen_basis(const FredholmKernel& kernel,
                                          std::size_t m) {
  const TimeGrid& grid = kernel.grid;
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd w(n), sqrt_w(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    w[j] = grid.weights[std::size_t(j)];
    sqrt_w[j] = std::sqrt(w[j]);
  }
  // Eigenfunctions of the covariance the kernel induces, K W K^T, pulled
  // back through the weight map exactly as in the factorization.
  const Eigen::MatrixXd induced =
      kernel.values * w.asDiagonal() * kernel.values.transpose();
  Eigen::MatrixXd a = sqrt_w.asDiagonal() * induced * sqrt_w.asDiagonal();
  a = 0.5 * (a + a.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("mercer_eigen_basis: eigensolver failed");
  if (m > grid.size())
    throw InvalidBasis("mercer-eigen basis has at most one function per node");
  Eigen::MatrixXd phi(n, Eigen::Index(m));
  for (std::size_t j = 0; j < m; ++j) {
    // Eigenvalues come back ascending; take the top m.
    const Eigen::Index col = n - 1 - Eigen::Index(j);
    phi.col(Eigen::Index(j)) = solver.eigenvectors().col(col).cwiseQuotient(sqrt_w);
  }
  return phi;
}

}  // namespace detail

/// First m expansion functions a_j = K W phi_j for a named orthonormal family
/// phi: "mercer-eigen", "trigonometric" or "haar".  The family is
/// orthonormalized under the grid quadrature before use and rejected as
/// invalid-basis if it degenerates.
inline SeriesExpansion series_expand(const FredholmKernel& kernel,
                                     const std::string& basis, std::size_t m) {
  const TimeGrid& grid = kernel.grid;
  const auto n = static_cast<Eigen::Index>(grid.size());

  Eigen::MatrixXd phi;
  if (basis == "mercer-eigen")
    phi = detail::mercer_eigen_basis(kernel, m);
  else if (basis == "trigonometric")
    phi = detail::trigonometric_basis(grid, m);
  else if (basis == "haar")
    phi = detail::haar_basis(grid, m);
  else
    throw InvalidBasis("unknown series basis '" + basis + "'");
  detail::orthonormalize_columns(grid, phi, basis);

  // Verify orthonormality under the quadrature; 1e-8 is the admission gate.
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = grid.weights[std::size_t(j)];
  if (phi.cols() > 0) {
    const Eigen::MatrixXd gram = phi.transpose() * w.asDiagonal() * phi;
    const double defect =
        (gram - Eigen::MatrixXd::Identity(phi.cols(), phi.cols()))
            .cwiseAbs()
            .maxCoeff();
    if (defect > 1e-8)
      throw InvalidBasis("series basis '" + basis +
                         "' is not orthonormal under the grid quadrature");
  }

  SeriesExpansion out;
  out.grid = grid;
  out.basis = basis;
  out.functions = kernel.values * w.asDiagonal() * phi;
  return out;
}

/// Pointwise truncation error R(t, t) - sum_{j < m} a_j(t)^2 of the series
/// cut after its stored functions.
inline double series_truncation_error(const SeriesExpansion& expansion,
                                      const CovarianceModel& model, double t) {
  const std::size_t i = expansion.grid.index_of(t);
  const double tail = expansion.functions.row(Eigen::Index(i)).squaredNorm();
  return model(t, t) - tail;
}

/// Conditioning data for bridging a kernel against functionals g_1..g_N:
/// transferred directions g*_i = K* g_i, their Gram matrix, and the running
/// (suffix) Gram needed by the canonical construction.
struct BridgeSpec {
  TimeGrid grid;
  std::vector<StepFunction> functionals;
  Eigen::MatrixXd transferred;       // grid.size() x N, column i = K* g_i
  Eigen::MatrixXd gram;              // N x N
  std::vector<Eigen::MatrixXd> running_gram;  // per node l: sum_{k >= l} w_k g*(s_k) g*(s_k)^T
};

/// Builds the conditioning data.  Degeneracy gate: the Gram must be positive
/// definite with condition number below 1e12, and its smallest eigenvalue
/// must exceed the quadrature noise floor of a couple of endpoint cells,
/// which is all a functional that annihilates the process can produce.
inline BridgeSpec bridge_gram(const FredholmKernel& kernel,
                              const std::vector<StepFunction>& functionals) {
  if (functionals.empty())
    throw std::invalid_argument("bridge_gram: need at least one functional");
  const TimeGrid& grid = kernel.grid;
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto N = static_cast<Eigen::Index>(functionals.size());

  BridgeSpec spec;
  spec.grid = grid;
  spec.functionals = functionals;
  spec.transferred.resize(n, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const GridFunction gi = adjoint_apply(kernel, functionals[std::size_t(i)]);
    spec.transferred.col(i) = gi.values;
  }

  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = grid.weights[std::size_t(j)];
  spec.gram = spec.transferred.transpose() * w.asDiagonal() * spec.transferred;
  spec.gram = 0.5 * (spec.gram + spec.gram.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(spec.gram);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("bridge_gram: eigensolver failed");
  const double lam_min = solver.eigenvalues()[0];
  const double lam_max = solver.eigenvalues()[N - 1];
  // The Gram of a functional the process annihilates is pure quadrature
  // residue: it either sits at rounding level relative to the kernel and
  // functional amplitudes, or it is carried entirely by one grid cell (the
  // closed-form bridge kernels leave exactly one end cell behind).  Require
  // invertibility that survives removing any single cell's contribution.
  double amp = 0.0;
  for (const StepFunction& g : functionals)
    for (std::size_t j = 0; j < grid.size(); ++j)
      amp = std::max(amp, std::abs(g.value_at_node(j)));
  const double kernel_scale = kernel.values.cwiseAbs().maxCoeff();
  const double floor =
      1e-12 * grid.horizon * (kernel_scale * amp) * (kernel_scale * amp);
  double lam_leave_one_out = lam_min;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const Eigen::VectorXd gj = spec.transferred.row(Eigen::Index(j)).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> loo(
        spec.gram - grid.weights[j] * gj * gj.transpose());
    lam_leave_one_out = std::min(lam_leave_one_out, loo.eigenvalues()[0]);
  }
  if (!(lam_min > floor) || !(lam_leave_one_out > floor) ||
      lam_max > 1e12 * lam_min)
    throw DependentFunctionals(
        "bridge functionals are linearly dependent or annihilate the process");

  spec.running_gram.resize(grid.size() + 1, Eigen::MatrixXd::Zero(N, N));
  for (std::size_t l = grid.size(); l-- > 0;) {
    const Eigen::VectorXd gs = spec.transferred.row(Eigen::Index(l)).transpose();
    spec.running_gram[l] =
        spec.running_gram[l + 1] + grid.weights[l] * gs * gs.transpose();
  }
  spec.running_gram.pop_back();
  return spec;
}

namespace detail {

/// Column m holds the node coefficients of int g_m dX as a functional of the
/// path values.
inline Eigen::MatrixXd increment_matrix(const BridgeSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.grid.size());
  const auto N = static_cast<Eigen::Index>(spec.functionals.size());
  Eigen::MatrixXd increments(n, N);
  for (Eigen::Index m = 0; m < N; ++m)
    increments.col(m) = spec.functionals[std::size_t(m)].increment_functional();
  return increments;
}

}  // namespace detail

/// Projects every path onto the null space of the functionals:
///   X^g = X - <<1_t, g>> Gram^{-1} Z,   Z_m = int g_m dX.
/// The projection coefficients reproduce the Gram exactly in the discrete
/// algebra, so int g_m dX^g vanishes pathwise to rounding.
inline PathEnsemble bridge_orthogonal(const FredholmKernel& kernel,
                                      const BridgeSpec& spec,
                                      PathEnsemble ensemble) {
  if (!kernel.grid.same_nodes(spec.grid) || !kernel.grid.same_nodes(ensemble.grid))
    throw std::invalid_argument("bridge_orthogonal: kernel, spec and ensemble grids differ");
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = kernel.grid.weights[std::size_t(j)];

  // cross(i, m) = <K* 1_{t_i}, K* g_m> = row i of K W g*.
  const Eigen::MatrixXd cross = kernel.values * w.asDiagonal() * spec.transferred;
  const Eigen::MatrixXd projector =
      spec.gram.ldlt().solve(cross.transpose());  // N x n

  const Eigen::MatrixXd z = ensemble.paths * detail::increment_matrix(spec);
  ensemble.paths -= z * projector;
  ensemble.kernel_provenance += "+bridge-orthogonal";
  return ensemble;
}

namespace detail {

/// Linear map sending raw noise to a canonical bridge path: row i gives the
/// coefficients of xi in
///   X^g(t_i) = X(t_i) - sum_{s_k < t_i} w_k K(t_i, s_k) |G(s_k)|
///       g*(s_k)^T G(s_k)^{-1} sum_{u_m < s_k} g*(u_m) / |G(u_m)| sqrt(w_m) xi_m,
/// where G is the running Gram and |.| its determinant.  The suffix Gram
/// loses rank at the horizon, so nodes where it is not safely invertible drop
/// out of the drift and the final value is fixed by the bridge constraint:
/// the functionals applied to the path must vanish (least squares when more
/// than one constrains the single free value).
inline Eigen::MatrixXd canonical_path_map(const FredholmKernel& kernel,
                                          const BridgeSpec& spec) {
  if (!kernel.grid.same_nodes(spec.grid))
    throw std::invalid_argument("bridge_canonical: kernel and spec grids differ");
  const TimeGrid& grid = kernel.grid;
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto N = static_cast<Eigen::Index>(spec.functionals.size());

  Eigen::VectorXd sqrt_w(n);
  for (Eigen::Index j = 0; j < n; ++j)
    sqrt_w[j] = std::sqrt(grid.weights[std::size_t(j)]);

  std::vector<double> det(grid.size(), 0.0);
  Eigen::MatrixXd solved = Eigen::MatrixXd::Zero(N, n);  // col k = G(s_k)^{-1} g*(s_k)
  std::vector<bool> usable(grid.size(), false);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Eigen::MatrixXd& g = spec.running_gram[k];
    det[k] = g.determinant();
    if (!(det[k] > 0.0)) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const double lam_min = es.eigenvalues()[0];
    const double lam_max = es.eigenvalues()[N - 1];
    if (!(lam_min > 0.0) || lam_max > 1e12 * lam_min) continue;
    solved.col(Eigen::Index(k)) =
        g.ldlt().solve(spec.transferred.row(Eigen::Index(k)).transpose());
    usable[k] = true;
  }

  // The causal rewrite divides by the suffix Gram, so the conditioning can
  // only be absorbed while that Gram is invertible.  A short trailing
  // degeneracy is structural (the suffix runs out of cells, and a causal
  // kernel zeroes the horizon column) and the terminal constraint row covers
  // it; a longer or interior one means a functional stopped contributing
  // mid-path (an indicator ending before the horizon) and the adapted
  // construction cannot represent that conditional law.
  std::size_t first_unusable = grid.size();
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (!usable[k]) {
      first_unusable = k;
      break;
    }
  bool tail_clean = grid.size() - first_unusable <= std::size_t(N) + 1;
  for (std::size_t k = first_unusable; k < grid.size() && tail_clean; ++k)
    if (usable[k]) tail_clean = false;
  if (!tail_clean)
    throw DependentFunctionals(
        "canonical bridging needs functionals that keep the suffix Gram "
        "invertible up to the horizon; this set degenerates mid-path, use "
        "the orthogonal construction instead");

  // drift(i, m): coefficient of sqrt(w_m) xi_m in the drift at t_i.
  Eigen::MatrixXd drift = Eigen::MatrixXd::Zero(n, n);
  Eigen::RowVectorXd weighted_direction(n);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!usable[k]) continue;
    weighted_direction.setZero();
    for (std::size_t m = 0; m < k; ++m) {
      if (!usable[m]) continue;
      weighted_direction[Eigen::Index(m)] =
          det[k] *
          solved.col(Eigen::Index(k))
              .dot(spec.transferred.row(Eigen::Index(m)).transpose()) /
          det[m];
    }
    // s_k < t_i picks up this term for every row strictly above node k.
    for (std::size_t i = k + 1; i < grid.size(); ++i)
      drift.row(Eigen::Index(i)) +=
          grid.weights[k] * kernel.values(Eigen::Index(i), Eigen::Index(k)) *
          weighted_direction;
  }

  Eigen::MatrixXd path_map = (kernel.values - drift) * sqrt_w.asDiagonal();

  const Eigen::MatrixXd increments = increment_matrix(spec);
  double denom = 0.0;
  for (Eigen::Index m = 0; m < N; ++m)
    denom += increments(n - 1, m) * increments(n - 1, m);
  if (denom > 0.0) {
    Eigen::RowVectorXd final_row = Eigen::RowVectorXd::Zero(n);
    for (Eigen::Index m = 0; m < N; ++m) {
      if (increments(n - 1, m) == 0.0) continue;
      Eigen::RowVectorXd rest = Eigen::RowVectorXd::Zero(n);
      for (Eigen::Index j = 0; j + 1 < n; ++j)
        rest += increments(j, m) * path_map.row(j);
      final_row -= increments(n - 1, m) * rest;
    }
    path_map.row(n - 1) = final_row / denom;
  }
  return path_map;
}

}  // namespace detail

/// Canonical (non-anticipative) bridge of a single noise draw; see
/// detail::canonical_path_map for the construction.
inline GridFunction bridge_canonical(const FredholmKernel& kernel,
                                     const BridgeSpec& spec,
                                     const NoiseVector& noise) {
  if (noise.values.size() < kernel.grid.size())
    throw std::invalid_argument("bridge_canonical: noise shorter than the grid");
  const Eigen::MatrixXd path_map = detail::canonical_path_map(kernel, spec);
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  Eigen::VectorXd xi(n);
  for (Eigen::Index j = 0; j < n; ++j) xi[j] = noise.values[std::size_t(j)];
  GridFunction out;
  out.grid = kernel.grid;
  out.values = path_map * xi;
  return out;
}

/// Ensemble version of the canonical bridge; the linear map is built once and
/// path p consumes noise stream p, matching what per-path bridge_canonical
/// calls would produce.
inline PathEnsemble bridge_canonical_ensemble(const FredholmKernel& kernel,
                                              const BridgeSpec& spec,
                                              std::size_t n_paths,
                                              std::uint64_t seed) {
  if (n_paths == 0)
    throw std::invalid_argument("bridge_canonical_ensemble: need at least one path");
  const Eigen::MatrixXd path_map = detail::canonical_path_map(kernel, spec);
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());

  PathEnsemble out;
  out.grid = kernel.grid;
  out.seed = seed;
  out.kernel_provenance = kernel.provenance + "+bridge-canonical";
  out.paths.resize(Eigen::Index(n_paths), n);
  parallel_for_blocks(n_paths, 256, [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd noise(n, Eigen::Index(end - begin));
    for (std::size_t p = begin; p < end; ++p) {
      const NoiseVector nv = gaussian_noise(kernel.grid.size(), seed, p);
      for (Eigen::Index j = 0; j < n; ++j)
        noise(j, Eigen::Index(p - begin)) = nv.values[std::size_t(j)];
    }
    out.paths.middleRows(Eigen::Index(begin), Eigen::Index(end - begin)).noalias() =
        (path_map * noise).transpose();
  });
  return out;
}

/// Unbiased sample covariance over a subset of nodes, with a delta-method
/// standard error per entry.
struct CovarianceEstimate {
  std::vector<std::size_t> node_indices;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd standard_error;
};

inline CovarianceEstimate empirical_covariance(
    const PathEnsemble& ensemble, const std::vector<std::size_t>& node_indices) {
  const std::size_t n_paths = ensemble.n_paths();
  if (n_paths < 2)
    throw std::invalid_argument("empirical_covariance: need at least two paths");
  for (std::size_t idx : node_indices)
    if (idx >= ensemble.grid.size())
      throw std::invalid_argument("empirical_covariance: node index out of range");

  const auto m = static_cast<Eigen::Index>(node_indices.size());
  Eigen::MatrixXd sub(Eigen::Index(n_paths), m);
  for (Eigen::Index j = 0; j < m; ++j)
    sub.col(j) = ensemble.paths.col(Eigen::Index(node_indices[std::size_t(j)]));
  const Eigen::RowVectorXd mean = sub.colwise().mean();
  sub.rowwise() -= mean;

  CovarianceEstimate out;
  out.node_indices = node_indices;
  out.covariance = sub.transpose() * sub / double(n_paths - 1);
  out.standard_error.resize(m, m);
  const double np = double(n_paths);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) {
      // Asymptotic variance of the sample covariance: (m22 - c^2) / n with
      // m22 the matching central fourth moment.
      const double c = out.covariance(a, b);
      const double m22 =
          (sub.col(a).array().square() * sub.col(b).array().square()).sum() / np;
      out.standard_error(a, b) = std::sqrt(std::max(0.0, m22 - c * c) / np);
    }
  return out;
}

}  // namespace fredholm
