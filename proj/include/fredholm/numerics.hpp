#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fredholm/common.hpp"

namespace fredholm {

enum class QuadratureRule { trapezoid, gauss_legendre };

inline const char* to_string(QuadratureRule r) {
  return r == QuadratureRule::trapezoid ? "trapezoid" : "gauss-legendre";
}

/// Quadrature grid on [0, T].  Nodes are strictly increasing and the weights
/// integrate constants exactly: |sum(w) - T| <= 1e-12 * T.  The trapezoid rule
/// places nodes at both endpoints; the Gauss-Legendre rule keeps the classical
/// interior nodes only, and records that choice in `rule` so downstream
/// consumers (manifests, step functions) can tell the two layouts apart.
struct TimeGrid {
  double horizon = 0.0;
  std::vector<double> nodes;
  std::vector<double> weights;
  QuadratureRule rule = QuadratureRule::trapezoid;

  std::size_t size() const { return nodes.size(); }

  void validate() const {
    if (horizon <= 0.0) throw std::invalid_argument("TimeGrid: horizon must be positive");
    if (nodes.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
    if (nodes.size() != weights.size())
      throw std::invalid_argument("TimeGrid: nodes/weights size mismatch");
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
      if (!(nodes[i] < nodes[i + 1]))
        throw std::invalid_argument("TimeGrid: nodes must be strictly increasing");
    if (nodes.front() < 0.0 || nodes.back() > horizon * (1.0 + 1e-12))
      throw std::invalid_argument("TimeGrid: nodes must lie in [0, T]");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!(weights[i] > 0.0))
        throw std::invalid_argument("TimeGrid: weights must be positive");
      sum += weights[i];
    }
    if (std::abs(sum - horizon) > 1e-12 * horizon)
      throw std::invalid_argument("TimeGrid: weights must sum to the horizon");
    if (rule == QuadratureRule::trapezoid) {
      if (nodes.front() != 0.0 || nodes.back() != horizon)
        throw std::invalid_argument("TimeGrid: trapezoid grid must span [0, T]");
    }
  }

  /// Index of the node equal to `t`.  Times produced by the same grid factory
  /// match exactly; a small absolute slack covers values that went through
  /// text round-trips.
  std::size_t index_of(double t) const {
    const double tol = 1e-9 * std::max(1.0, horizon);
    auto it = std::lower_bound(nodes.begin(), nodes.end(), t - tol);
    if (it == nodes.end() || std::abs(*it - t) > tol)
      throw std::invalid_argument("TimeGrid: time " + std::to_string(t) +
                                  " is not a grid node");
    return static_cast<std::size_t>(it - nodes.begin());
  }

  bool same_nodes(const TimeGrid& other) const {
    return horizon == other.horizon && nodes == other.nodes;
  }
};

/// Uniform grid with composite trapezoid weights: h/2 at the endpoints, h
/// inside.  Requires n >= 2 subintervals.
inline TimeGrid make_uniform_grid(double T, std::size_t n) {
  if (!(T > 0.0)) throw std::invalid_argument("make_uniform_grid: T must be positive");
  if (n < 2) throw std::invalid_argument("make_uniform_grid: need n >= 2 subintervals");
  TimeGrid g;
  g.horizon = T;
  g.rule = QuadratureRule::trapezoid;
  g.nodes.resize(n + 1);
  g.weights.resize(n + 1);
  const double h = T / double(n);
  for (std::size_t i = 0; i <= n; ++i) {
    g.nodes[i] = T * double(i) / double(n);
    g.weights[i] = (i == 0 || i == n) ? h / 2.0 : h;
  }
  g.nodes[n] = T;
  g.validate();
  return g;
}

namespace detail {

// Value and derivative of the Legendre polynomial P_n on [-1, 1] via the
// three-term recurrence.
inline void legendre_pair(unsigned n, double x, double& p, double& dp) {
  double pm = 1.0, pc = x;
  if (n == 0) { p = 1.0; dp = 0.0; return; }
  for (unsigned k = 2; k <= n; ++k) {
    const double pn = ((2.0 * k - 1.0) * x * pc - (k - 1.0) * pm) / double(k);
    pm = pc;
    pc = pn;
  }
  p = pc;
  dp = n * (x * pc - pm) / (x * x - 1.0);
}

}  // namespace detail

/// n-point Gauss-Legendre rule mapped to (0, T).  Newton iteration on P_n from
/// the Chebyshev initial guess; nodes stay strictly interior, so the grid does
/// not carry padded endpoint nodes (see TimeGrid::rule).
inline TimeGrid make_gauss_legendre_grid(double T, std::size_t n) {
  if (!(T > 0.0))
    throw std::invalid_argument("make_gauss_legendre_grid: T must be positive");
  if (n < 2) throw std::invalid_argument("make_gauss_legendre_grid: need n >= 2 nodes");
  TimeGrid g;
  g.horizon = T;
  g.rule = QuadratureRule::gauss_legendre;
  g.nodes.resize(n);
  g.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Root i (descending in x) of P_n.
    double x = std::cos(M_PI * (double(i) + 0.75) / (double(n) + 0.5));
    double p = 0.0, dp = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
      detail::legendre_pair(unsigned(n), x, p, dp);
      const double step = p / dp;
      x -= step;
      if (std::abs(step) < 1e-15) break;
    }
    detail::legendre_pair(unsigned(n), x, p, dp);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    g.nodes[i] = T * (x + 1.0) / 2.0;
    g.weights[i] = T * w / 2.0;
  }
  std::reverse(g.nodes.begin(), g.nodes.end());
  std::reverse(g.weights.begin(), g.weights.end());
  g.validate();
  return g;
}

/// Trapezoid weights for an arbitrary strictly increasing node set spanning
/// [0, T].  Used for tabulated covariance input whose nodes we do not choose.
inline TimeGrid make_trapezoid_grid(std::vector<double> nodes) {
  if (nodes.size() < 2)
    throw std::invalid_argument("make_trapezoid_grid: need at least two nodes");
  TimeGrid g;
  g.horizon = nodes.back();
  g.rule = QuadratureRule::trapezoid;
  g.nodes = std::move(nodes);
  g.weights.resize(g.nodes.size());
  const std::size_t n = g.nodes.size() - 1;
  g.weights[0] = (g.nodes[1] - g.nodes[0]) / 2.0;
  g.weights[n] = (g.nodes[n] - g.nodes[n - 1]) / 2.0;
  for (std::size_t i = 1; i < n; ++i)
    g.weights[i] = (g.nodes[i + 1] - g.nodes[i - 1]) / 2.0;
  g.validate();
  return g;
}

/// Refined grid of the same rule: trapezoid grids get cell midpoints inserted,
/// Gauss-Legendre grids double the node count.
inline TimeGrid refine_grid(const TimeGrid& g) {
  if (g.rule == QuadratureRule::gauss_legendre)
    return make_gauss_legendre_grid(g.horizon, 2 * g.size());
  std::vector<double> nodes;
  nodes.reserve(2 * g.size() - 1);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    nodes.push_back(g.nodes[i]);
    nodes.push_back((g.nodes[i] + g.nodes[i + 1]) / 2.0);
  }
  nodes.push_back(g.nodes.back());
  return make_trapezoid_grid(std::move(nodes));
}

/// Hermite polynomial H_p in the probabilists' scaling divided by p!, so that
/// H_0 = 1, H_1(x) = x and (n+1) H_{n+1}(x) = x H_n(x) - H_{n-1}(x).
/// Under this normalization E[H_p(Z) H_q(Z)] = delta_pq / p! for Z standard
/// normal, and d/dx H_p = H_{p-1}.
inline double hermite(unsigned p, double x) {
  if (p == 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (unsigned n = 1; n < p; ++n) {
    const double next = (x * cur - prev) / double(n + 1);
    prev = cur;
    cur = next;
  }
  return cur;
}

inline double hermite_derivative(unsigned p, double x) {
  if (p == 0) return 0.0;
  return hermite(p - 1, x);
}

/// Riemann-Stieltjes sum of f against the increments of g over an aligned
/// sample sequence: sum over cells of (f_i + f_{i+1})/2 * (g_{i+1} - g_i).
/// Exact for constant f, and bilinear in (f, g).
inline double bv_stieltjes_integrate(const std::vector<double>& f,
                                     const std::vector<double>& g) {
  if (f.size() != g.size())
    throw std::invalid_argument("bv_stieltjes_integrate: length mismatch");
  if (f.size() < 2)
    throw std::invalid_argument("bv_stieltjes_integrate: need at least two samples");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i)
    sum += 0.5 * (f[i] + f[i + 1]) * (g[i + 1] - g[i]);
  return sum;
}

}  // namespace fredholm
