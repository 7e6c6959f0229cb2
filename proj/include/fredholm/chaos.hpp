#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
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

/// Envelope c * exp(lambda x^2) that must dominate |f|, |f'|, |f''|.  The
/// exponent is admissible for a model only when lambda < 1/4 / sup_t R(t, t).
struct GrowthEnvelope {
  double c = 1.0;
  double lambda = 0.0;
};

/// Twice-differentiable scalar function with a declared growth envelope.
struct ScalarFunction {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> df;
  std::function<double(double)> d2f;
  GrowthEnvelope envelope;
};

/// Polynomial sum_k coeffs[k] x^k with derivatives evaluated by Horner's rule.
inline ScalarFunction make_polynomial(const std::string& name,
                                      std::vector<double> coeffs,
                                      GrowthEnvelope envelope) {
  if (coeffs.empty()) coeffs.push_back(0.0);
  auto horner = [](const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (std::size_t k = c.size(); k-- > 0;) acc = acc * x + c[k];
    return acc;
  };
  std::vector<double> d1(coeffs.size() > 1 ? coeffs.size() - 1 : 1, 0.0);
  for (std::size_t k = 1; k < coeffs.size(); ++k) d1[k - 1] = double(k) * coeffs[k];
  std::vector<double> d2(d1.size() > 1 ? d1.size() - 1 : 1, 0.0);
  for (std::size_t k = 1; k < d1.size(); ++k) d2[k - 1] = double(k) * d1[k];
  ScalarFunction out;
  out.name = name;
  out.f = [coeffs, horner](double x) { return horner(coeffs, x); };
  out.df = [d1, horner](double x) { return horner(d1, x); };
  out.d2f = [d2, horner](double x) { return horner(d2, x); };
  out.envelope = envelope;
  return out;
}

/// x^p with an envelope wide enough to clear the +-6 sigma sampling window of
/// every unit-variance-scale model; growth_check still verifies the pair.
inline ScalarFunction monomial(unsigned p, double lambda = 0.1) {
  std::vector<double> coeffs(p + 1, 0.0);
  coeffs[p] = 1.0;
  static const double c_table[] = {2.0, 7.0, 11.0, 25.0, 80.0};
  const double c = p < 5 ? c_table[p] : std::pow(7.0, double(p));
  return make_polynomial("x^" + std::to_string(p), std::move(coeffs),
                         GrowthEnvelope{c, lambda});
}

/// Polynomial in the process values at a fixed set of anchor times,
/// G = sum_terms coeff * prod_i X(tau_i)^{e_i}.  Serves as the smooth random
/// variable the duality harness pairs the Ito remainder against; its
/// derivative in the process direction is sum_i partial_i(G) 1_{[0, tau_i)}.
class TestVariable {
 public:
  struct Term {
    double coeff = 0.0;
    std::vector<unsigned> exponents;  // one per anchor
  };

  TestVariable(std::vector<double> anchor_times, std::vector<Term> terms)
      : anchors_(std::move(anchor_times)), terms_(std::move(terms)) {
    if (anchors_.empty())
      throw std::invalid_argument("TestVariable: need at least one anchor");
    for (const auto& term : terms_)
      if (term.exponents.size() != anchors_.size())
        throw std::invalid_argument("TestVariable: one exponent per anchor required");
  }

  static TestVariable monomial(std::vector<double> anchor_times,
                               std::vector<unsigned> exponents, double coeff = 1.0) {
    Term t;
    t.coeff = coeff;
    t.exponents = std::move(exponents);
    return TestVariable(std::move(anchor_times), {std::move(t)});
  }

  const std::vector<double>& anchors() const { return anchors_; }
  const std::vector<Term>& terms() const { return terms_; }

  unsigned degree() const {
    unsigned deg = 0;
    for (const auto& term : terms_) {
      unsigned d = 0;
      for (unsigned e : term.exponents) d += e;
      deg = std::max(deg, d);
    }
    return deg;
  }

  double eval(const std::vector<double>& x) const {
    double out = 0.0;
    for (const auto& term : terms_) {
      double prod = term.coeff;
      for (std::size_t i = 0; i < anchors_.size(); ++i)
        prod *= pow_u(x[i], term.exponents[i]);
      out += prod;
    }
    return out;
  }

  /// Derivative with respect to the i-th anchor value.
  double partial(std::size_t i, const std::vector<double>& x) const {
    double out = 0.0;
    for (const auto& term : terms_) {
      if (term.exponents[i] == 0) continue;
      double prod = term.coeff * double(term.exponents[i]) *
                    pow_u(x[i], term.exponents[i] - 1);
      for (std::size_t j = 0; j < anchors_.size(); ++j) {
        if (j == i) continue;
        prod *= pow_u(x[j], term.exponents[j]);
      }
      out += prod;
    }
    return out;
  }

 private:
  static double pow_u(double x, unsigned e) {
    double acc = 1.0;
    for (; e > 0; --e) acc *= x;
    return acc;
  }

  std::vector<double> anchors_;
  std::vector<Term> terms_;
};

namespace detail {

/// X(h) realized from one noise vector through the kernel coefficients.
inline double wiener_integral(const TimeGrid& grid, const Eigen::VectorXd& coeffs,
                              const NoiseVector& noise) {
  if (noise.values.size() < grid.size())
    throw std::invalid_argument("wiener_integral: noise shorter than the grid");
  double sum = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j)
    sum += coeffs[Eigen::Index(j)] * std::sqrt(grid.weights[j]) * noise.values[j];
  return sum;
}

}  // namespace detail

/// p-fold integral of the rank-one tensor h^(x)p, evaluated through the
/// Hermite representation p! |h|^p H_p(X(h)/|h|); H_p is the normalized
/// Hermite polynomial, so p! H_p is the classical probabilists' one.
inline double mwi_rank_one(const FredholmKernel& kernel, const StepFunction& h,
                           unsigned p, const NoiseVector& noise) {
  if (p == 0) return 1.0;
  const GridFunction ch = adjoint_apply(kernel, h);
  const double norm2 = quadrature_inner(kernel.grid, ch.values, ch.values);
  if (!(norm2 > 0.0))
    throw DegenerateIntegrand("mwi_rank_one: integrand has zero norm");
  const double norm = std::sqrt(norm2);
  const double xi = detail::wiener_integral(kernel.grid, ch.values, noise) / norm;
  return factorial_as_double(p) * std::pow(norm, double(p)) * hermite(p, xi);
}

/// (a+b)-fold integral of the symmetrized tensor f^(x)a (x) g^(x)b.  Writes
/// g = alpha f_hat + beta g_hat with g_hat orthogonal to f, expands the tensor
/// binomially, and uses that integrals along orthogonal directions multiply:
///   I_{m+k}(f_hat^m (x) g_hat^k) = m! H_m(xi_f) k! H_k(xi_g).
inline double mwi_two_factor(const FredholmKernel& kernel, const StepFunction& f,
                             const StepFunction& g, unsigned a, unsigned b,
                             const NoiseVector& noise) {
  if (a + b > 6)
    throw UnsupportedOrder("mwi_two_factor: total order above 6 is not supported");
  if (a + b == 0) return 1.0;
  if (a == 0) return mwi_rank_one(kernel, g, b, noise);
  if (b == 0) return mwi_rank_one(kernel, f, a, noise);

  const GridFunction cf = adjoint_apply(kernel, f);
  const GridFunction cg = adjoint_apply(kernel, g);
  const double nf2 = quadrature_inner(kernel.grid, cf.values, cf.values);
  const double ng2 = quadrature_inner(kernel.grid, cg.values, cg.values);
  if (!(nf2 > 0.0) || !(ng2 > 0.0))
    throw DegenerateIntegrand("mwi_two_factor: integrand has zero norm");
  const double nf = std::sqrt(nf2);
  const double alpha = quadrature_inner(kernel.grid, cf.values, cg.values) / nf;
  const double beta2 = ng2 - alpha * alpha;

  const double xf = detail::wiener_integral(kernel.grid, cf.values, noise);
  const double xg = detail::wiener_integral(kernel.grid, cg.values, noise);
  const double xi_f = xf / nf;

  // Collinear g: the residual direction is numerically empty, so the tensor
  // is rank one along f.
  if (beta2 <= 16.0 * std::numeric_limits<double>::epsilon() * ng2) {
    return std::pow(nf, double(a)) * std::pow(alpha, double(b)) *
           factorial_as_double(a + b) * hermite(a + b, xi_f);
  }
  const double beta = std::sqrt(beta2);
  const double xi_g = (xg - alpha * xi_f) / beta;

  double sum = 0.0;
  for (unsigned k = 0; k <= b; ++k) {
    const unsigned m = a + b - k;
    sum += binomial_as_double(b, k) * std::pow(alpha, double(b - k)) *
           std::pow(beta, double(k)) * factorial_as_double(m) * hermite(m, xi_f) *
           factorial_as_double(k) * hermite(k, xi_g);
  }
  return std::pow(nf, double(a)) * sum;
}

struct ProductFormulaReport {
  double max_abs_deviation = 0.0;
  std::size_t n_draws = 0;
};

/// Per-draw verification of the product identity
///   I_p(f^p) I_q(g^q) = sum_r r! C(p,r) C(q,r) <f,g>^r I_{p+q-2r}(f^(p-r) (x) g^(q-r)).
/// The identity is algebraic in the underlying Gaussians, so each draw must
/// satisfy it to rounding, not just on average.
inline ProductFormulaReport product_formula_check(const FredholmKernel& kernel,
                                                  const StepFunction& f,
                                                  const StepFunction& g,
                                                  unsigned p, unsigned q,
                                                  std::size_t n_draws,
                                                  std::uint64_t seed) {
  if (p + q > 6)
    throw UnsupportedOrder("product_formula_check: total order above 6 is not supported");
  const double fg = ht_inner(kernel, f, g);
  ProductFormulaReport report;
  report.n_draws = n_draws;
  for (std::size_t d = 0; d < n_draws; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), seed, d);
    const double lhs =
        mwi_rank_one(kernel, f, p, noise) * mwi_rank_one(kernel, g, q, noise);
    double rhs = 0.0;
    for (unsigned r = 0; r <= std::min(p, q); ++r)
      rhs += factorial_as_double(r) * binomial_as_double(p, r) *
             binomial_as_double(q, r) * std::pow(fg, double(r)) *
             mwi_two_factor(kernel, f, g, p - r, q - r, noise);
    report.max_abs_deviation =
        std::max(report.max_abs_deviation, std::abs(lhs - rhs));
  }
  return report;
}

struct GrowthReport {
  bool lambda_admissible = false;
  bool pass = false;
  double lambda_bound = 0.0;       // 1/4 / sup_t R(t,t)
  double first_violation_x = std::numeric_limits<double>::quiet_NaN();
  std::string violated_component;  // "lambda", "f", "df" or "d2f"
};

/// Checks the declared envelope: lambda must clear the model's variance bound
/// strictly, and c e^{lambda x^2} must dominate |f|, |f'|, |f''| on a sampled
/// window of +-6 maximal standard deviations.
inline GrowthReport growth_check(const ScalarFunction& f, const CovarianceModel& model,
                                 const TimeGrid& grid, std::size_t sample_count) {
  double sup_var = 0.0;
  for (double t : grid.nodes) sup_var = std::max(sup_var, model(t, t));
  GrowthReport report;
  report.lambda_bound = sup_var > 0.0
                            ? 0.25 / sup_var
                            : std::numeric_limits<double>::infinity();
  report.lambda_admissible = f.envelope.lambda < report.lambda_bound;
  if (!report.lambda_admissible) {
    report.violated_component = "lambda";
    return report;
  }
  const double reach = 6.0 * std::sqrt(sup_var);
  const std::size_t count = std::max<std::size_t>(sample_count, 2);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = -reach + 2.0 * reach * double(i) / double(count - 1);
    const double bound = f.envelope.c * std::exp(f.envelope.lambda * x * x);
    const char* failed = nullptr;
    if (std::abs(f.f(x)) > bound)
      failed = "f";
    else if (std::abs(f.df(x)) > bound)
      failed = "df";
    else if (std::abs(f.d2f(x)) > bound)
      failed = "d2f";
    if (failed) {
      report.first_violation_x = x;
      report.violated_component = failed;
      return report;
    }
  }
  report.pass = true;
  return report;
}

namespace detail {

inline void require_admissible_envelope(const ScalarFunction& f,
                                        const CovarianceModel& model,
                                        const TimeGrid& grid) {
  double sup_var = 0.0;
  for (double t : grid.nodes) sup_var = std::max(sup_var, model(t, t));
  if (sup_var > 0.0 && !(f.envelope.lambda < 0.25 / sup_var))
    throw GrowthConditionViolated(
        "growth envelope exponent reaches 1/4 of the inverse peak variance for '" +
        f.name + "'");
}

}  // namespace detail

/// Everything in the pathwise change-of-variable formula except the
/// divergence term:
///   f(X_t) - f(X_0) - 1/2 sum_{s_i < t} f''(X_{s_i}) d_i,
/// with d_i the variance increments and the sum taken left-point.
inline double ito_lhs(const CovarianceModel& model, const ScalarFunction& f,
                      const GridFunction& path, double t) {
  detail::require_admissible_envelope(f, model, path.grid);
  const std::size_t stop = path.grid.index_of(t);
  const auto d = variance_increments(model, path.grid);
  double correction = 0.0;
  for (std::size_t i = 0; i < stop; ++i)
    correction += f.d2f(path.values[Eigen::Index(i)]) * d[i];
  return f.f(path.values[Eigen::Index(stop)]) - f.f(path.values[0]) -
         0.5 * correction;
}

struct DualityReport {
  double lhs_mean = 0.0;
  double rhs_mean = 0.0;
  double lhs_se = 0.0;
  double rhs_se = 0.0;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
  bool pass = false;
};

struct DualityCase {
  ScalarFunction f;
  TestVariable G;
  double t = 0.0;
};

/// Monte Carlo check of the divergence-pairing identity behind the
/// change-of-variable formula: for each case,
///   E[G * ito_lhs(f, t)]  vs  E[sum_i dG/dX_tau_i * <f'(X) 1_t, 1_tau_i>],
/// the right side using the extended pairing against the covariance rows.
/// All cases share one path ensemble, simulated in fixed-size blocks so the
/// reported means do not depend on the thread count.
inline std::vector<DualityReport> ito_duality_batch(
    const CovarianceModel& model, const FredholmKernel& kernel,
    const std::vector<DualityCase>& cases, std::size_t n_paths,
    std::uint64_t seed) {
  if (n_paths == 0)
    throw std::invalid_argument("ito_duality_batch: need at least one path");
  if (!model.rows_of_bounded_variation())
    throw UnsupportedModel(
        "ito_duality_batch: model does not declare rows of bounded variation");
  const TimeGrid& grid = kernel.grid;
  for (const auto& c : cases) {
    detail::require_admissible_envelope(c.f, model, grid);
    grid.index_of(c.t);
    for (double tau : c.G.anchors()) grid.index_of(tau);
  }

  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd sqrt_w(n);
  for (Eigen::Index j = 0; j < n; ++j)
    sqrt_w[j] = std::sqrt(grid.weights[std::size_t(j)]);
  // Scaled kernel maps raw noise straight to path values.
  const Eigen::MatrixXd path_map = kernel.values * sqrt_w.asDiagonal();

  const auto d = variance_increments(model, grid);
  const std::size_t n_cases = cases.size();

  // Fixed block partition; each block's partial sums land in their own slot
  // and the cross-block reduction is a fixed-shape pairwise sum.
  const std::size_t block = 1024;
  const std::size_t n_blocks = (n_paths + block - 1) / block;
  std::vector<std::vector<double>> lhs1(n_cases), lhs2(n_cases), rhs1(n_cases),
      rhs2(n_cases);
  for (std::size_t c = 0; c < n_cases; ++c) {
    lhs1[c].assign(n_blocks, 0.0);
    lhs2[c].assign(n_blocks, 0.0);
    rhs1[c].assign(n_blocks, 0.0);
    rhs2[c].assign(n_blocks, 0.0);
  }

  // Per-case constants hoisted out of the path loop.
  struct CasePlan {
    std::size_t stop = 0;                    // index of t
    std::vector<std::size_t> anchor_idx;
    Eigen::MatrixXd row_increments;          // (stop) x anchors: dR(tau, s) per cell
  };
  std::vector<CasePlan> plans(n_cases);
  for (std::size_t c = 0; c < n_cases; ++c) {
    CasePlan& plan = plans[c];
    plan.stop = grid.index_of(cases[c].t);
    const auto& anchors = cases[c].G.anchors();
    plan.anchor_idx.reserve(anchors.size());
    for (double tau : anchors) plan.anchor_idx.push_back(grid.index_of(tau));
    plan.row_increments.resize(Eigen::Index(plan.stop), Eigen::Index(anchors.size()));
    for (std::size_t a = 0; a < anchors.size(); ++a)
      for (std::size_t i = 0; i < plan.stop; ++i)
        plan.row_increments(Eigen::Index(i), Eigen::Index(a)) =
            model(anchors[a], grid.nodes[i + 1]) - model(anchors[a], grid.nodes[i]);
  }

  parallel_for_blocks(n_blocks, 1, [&](std::size_t blk_begin, std::size_t blk_end) {
    Eigen::MatrixXd noise_block(n, Eigen::Index(block));
    Eigen::MatrixXd paths;
    std::vector<double> lhs_acc(block), rhs_acc(block);
    std::vector<double> anchor_values, du;
    for (std::size_t blk = blk_begin; blk < blk_end; ++blk) {
      const std::size_t first = blk * block;
      const std::size_t count = std::min(block, n_paths - first);
      for (std::size_t p = 0; p < count; ++p) {
        const NoiseVector noise = gaussian_noise(grid.size(), seed, first + p);
        for (Eigen::Index j = 0; j < n; ++j)
          noise_block(j, Eigen::Index(p)) = noise.values[std::size_t(j)];
      }
      paths.noalias() = path_map * noise_block.leftCols(Eigen::Index(count));

      for (std::size_t c = 0; c < n_cases; ++c) {
        const CasePlan& plan = plans[c];
        const auto& f = cases[c].f;
        const auto& G = cases[c].G;
        anchor_values.resize(plan.anchor_idx.size());
        du.resize(plan.stop + 1);
        for (std::size_t p = 0; p < count; ++p) {
          const auto path = paths.col(Eigen::Index(p));

          double correction = 0.0;
          for (std::size_t i = 0; i < plan.stop; ++i)
            correction += f.d2f(path[Eigen::Index(i)]) * d[i];
          const double remainder = f.f(path[Eigen::Index(plan.stop)]) -
                                   f.f(path[0]) - 0.5 * correction;

          for (std::size_t a = 0; a < anchor_values.size(); ++a)
            anchor_values[a] = path[Eigen::Index(plan.anchor_idx[a])];
          lhs_acc[p] = G.eval(anchor_values) * remainder;

          for (std::size_t i = 0; i <= plan.stop; ++i)
            du[i] = f.df(path[Eigen::Index(i)]);
          double rhs = 0.0;
          for (std::size_t a = 0; a < anchor_values.size(); ++a) {
            double pairing = 0.0;
            for (std::size_t i = 0; i < plan.stop; ++i)
              pairing += 0.5 * (du[i] + du[i + 1]) *
                         plan.row_increments(Eigen::Index(i), Eigen::Index(a));
            rhs += G.partial(a, anchor_values) * pairing;
          }
          rhs_acc[p] = rhs;
        }
        lhs1[c][blk] = pairwise_sum(lhs_acc.data(), count);
        rhs1[c][blk] = pairwise_sum(rhs_acc.data(), count);
        for (std::size_t p = 0; p < count; ++p) {
          lhs_acc[p] *= lhs_acc[p];
          rhs_acc[p] *= rhs_acc[p];
        }
        lhs2[c][blk] = pairwise_sum(lhs_acc.data(), count);
        rhs2[c][blk] = pairwise_sum(rhs_acc.data(), count);
      }
    }
  });

  std::vector<DualityReport> reports(n_cases);
  for (std::size_t c = 0; c < n_cases; ++c) {
    const double np = double(n_paths);
    DualityReport& r = reports[c];
    r.n_paths = n_paths;
    r.seed = seed;
    r.lhs_mean = pairwise_sum(lhs1[c]) / np;
    r.rhs_mean = pairwise_sum(rhs1[c]) / np;
    const double lhs_var =
        std::max(0.0, (pairwise_sum(lhs2[c]) - np * r.lhs_mean * r.lhs_mean) /
                          (np - 1.0));
    const double rhs_var =
        std::max(0.0, (pairwise_sum(rhs2[c]) - np * r.rhs_mean * r.rhs_mean) /
                          (np - 1.0));
    r.lhs_se = std::sqrt(lhs_var / np);
    r.rhs_se = std::sqrt(rhs_var / np);
    const double combined = std::sqrt(r.lhs_se * r.lhs_se + r.rhs_se * r.rhs_se);
    r.pass = std::abs(r.lhs_mean - r.rhs_mean) <= 3.5 * combined;
  }
  return reports;
}

inline DualityReport ito_duality_check(const CovarianceModel& model,
                                       const FredholmKernel& kernel,
                                       const ScalarFunction& f, double t,
                                       const TestVariable& G, std::size_t n_paths,
                                       std::uint64_t seed) {
  return ito_duality_batch(model, kernel, {DualityCase{f, G, t}}, n_paths,
                           seed)[0];
}

}  // namespace fredholm
