#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fredholm/chaos.hpp"
#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/numerics.hpp"
#include "fredholm/rng.hpp"
#include "fredholm/transfer.hpp"

using namespace fredholm;

namespace {

FredholmKernel indicator_kernel(std::size_t cells) {
  return known_kernel("brownian-motion-indicator", make_uniform_grid(1.0, cells));
}

FredholmKernel mercer_bm(std::size_t cells) {
  const TimeGrid grid = make_uniform_grid(1.0, cells);
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  return build_fredholm_kernel(mercer_decompose(model, grid));
}

/// X(h) = sum_j c_j sqrt(w_j) xi_j, written out independently of the library
/// internals so the oracle expansions below do not share code with the
/// operator under test.
double realize(const FredholmKernel& kernel, const StepFunction& h,
               const NoiseVector& noise) {
  const GridFunction c = wiener_coeffs(kernel, h);
  double sum = 0.0;
  for (std::size_t j = 0; j < kernel.grid.size(); ++j)
    sum += c.values[Eigen::Index(j)] * std::sqrt(kernel.grid.weights[j]) *
           noise.values[j];
  return sum;
}

double inner(const FredholmKernel& kernel, const StepFunction& f,
             const StepFunction& g) {
  const GridFunction cf = wiener_coeffs(kernel, f);
  const GridFunction cg = wiener_coeffs(kernel, g);
  return quadrature_inner(kernel.grid, cf.values, cg.values);
}

}  // namespace

// Wick expansions of low-order integrals: with x = X(f), y = X(g),
// a = <f,f>, b = <g,g>, c = <f,g>,
//   I_2(f (x) f)             = x^2 - a
//   I_3(f (x) f (x) f)       = x^3 - 3 a x
//   I_3(f (x) f (x) g)       = x^2 y - a y - 2 c x
//   I_4(f^(x)2 (x) g^(x)2)   = x^2 y^2 - a y^2 - b x^2 - 4 c x y + a b + 2 c^2
// Each is the classical moment expansion of the corresponding multiple
// integral and never touches the Hermite code path the operators use.
TEST_CASE("rank-one integrals match their Wick expansions draw by draw") {
  const FredholmKernel kernel = indicator_kernel(64);
  const StepFunction h = StepFunction::indicator(kernel.grid, 0.5);
  const double a = inner(kernel, h, h);
  for (std::uint64_t d = 0; d < 64; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), 91u, d);
    const double x = realize(kernel, h, noise);
    CHECK(mwi_rank_one(kernel, h, 0, noise) == 1.0);
    CHECK_THAT(mwi_rank_one(kernel, h, 1, noise),
               Catch::Matchers::WithinAbs(x, 1e-12));
    CHECK_THAT(mwi_rank_one(kernel, h, 2, noise),
               Catch::Matchers::WithinAbs(x * x - a, 1e-12));
    CHECK_THAT(mwi_rank_one(kernel, h, 3, noise),
               Catch::Matchers::WithinAbs(x * x * x - 3.0 * a * x, 1e-12));
    CHECK_THAT(mwi_rank_one(kernel, h, 4, noise),
               Catch::Matchers::WithinAbs(
                   x * x * x * x - 6.0 * a * x * x + 3.0 * a * a, 1e-11));
  }
}

TEST_CASE("two-factor integrals match their Wick expansions draw by draw") {
  const FredholmKernel kernel = indicator_kernel(64);
  const StepFunction f = StepFunction::indicator(kernel.grid, 0.75);
  const StepFunction g =
      StepFunction::from_pieces(kernel.grid, {0.0, 0.5, 1.0}, {1.0, 2.0});
  const double a = inner(kernel, f, f);
  const double b = inner(kernel, g, g);
  const double c = inner(kernel, f, g);
  for (std::uint64_t d = 0; d < 64; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), 92u, d);
    const double x = realize(kernel, f, noise);
    const double y = realize(kernel, g, noise);
    CHECK_THAT(mwi_two_factor(kernel, f, g, 1, 1, noise),
               Catch::Matchers::WithinAbs(x * y - c, 1e-12));
    CHECK_THAT(mwi_two_factor(kernel, f, g, 2, 1, noise),
               Catch::Matchers::WithinAbs(x * x * y - a * y - 2.0 * c * x, 1e-11));
    CHECK_THAT(mwi_two_factor(kernel, f, g, 2, 2, noise),
               Catch::Matchers::WithinAbs(x * x * y * y - a * y * y - b * x * x -
                                              4.0 * c * x * y + a * b +
                                              2.0 * c * c,
                                          1e-10));
    // Degenerate second factor: the operator must agree with the rank-one
    // route exactly, not just statistically.
    CHECK(mwi_two_factor(kernel, f, g, 2, 0, noise) ==
          mwi_rank_one(kernel, f, 2, noise));
    CHECK(mwi_two_factor(kernel, f, g, 0, 3, noise) ==
          mwi_rank_one(kernel, g, 3, noise));
  }
}

TEST_CASE("two-factor integral handles collinear factors") {
  const FredholmKernel kernel = indicator_kernel(64);
  const StepFunction f = StepFunction::indicator(kernel.grid, 0.5);
  // g = 3 f as a step function; the residual direction collapses and the
  // clamp must reroute through the rank-one representation.
  const StepFunction g =
      StepFunction::from_pieces(kernel.grid, {0.0, 0.5, 1.0}, {3.0, 0.0});
  const double a = inner(kernel, f, f);
  for (std::uint64_t d = 0; d < 16; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), 93u, d);
    const double x = realize(kernel, f, noise);
    // I_2(f (x) g) with g = 3 f is 3 I_2(f (x) f).
    CHECK_THAT(mwi_two_factor(kernel, f, g, 1, 1, noise),
               Catch::Matchers::WithinAbs(3.0 * (x * x - a), 1e-11));
  }
}

TEST_CASE("chaos order and degeneracy gates") {
  const FredholmKernel kernel = indicator_kernel(16);
  const StepFunction f = StepFunction::indicator(kernel.grid, 0.5);
  const StepFunction zero = StepFunction::constant(kernel.grid, 0.0);
  const NoiseVector noise = gaussian_noise(kernel.grid.size(), 94u, 0);
  CHECK_THROWS_AS(mwi_two_factor(kernel, f, f, 4, 3, noise), UnsupportedOrder);
  CHECK_THROWS_AS(product_formula_check(kernel, f, f, 4, 3, 1, 94u),
                  UnsupportedOrder);
  CHECK_THROWS_AS(mwi_rank_one(kernel, zero, 1, noise), DegenerateIntegrand);
  CHECK_THROWS_AS(mwi_rank_one(kernel, zero, 3, noise), DegenerateIntegrand);
  CHECK(mwi_rank_one(kernel, zero, 0, noise) == 1.0);
}

TEST_CASE("product formula holds draw by draw across factor geometries") {
  const FredholmKernel kernel = indicator_kernel(64);
  const StepFunction half = StepFunction::indicator(kernel.grid, 0.5);
  const StepFunction late =
      StepFunction::from_pieces(kernel.grid, {0.0, 0.5, 1.0}, {0.0, 1.0});
  const StepFunction wide = StepFunction::indicator(kernel.grid, 0.75);
  const StepFunction overlap =
      StepFunction::from_pieces(kernel.grid, {0.0, 0.5, 1.0}, {1.0, 2.0});

  SECTION("aligned factors, first order") {
    const auto report = product_formula_check(kernel, half, half, 1, 1, 1000, 95u);
    CHECK(report.n_draws == 1000);
    CHECK(report.max_abs_deviation <= 1e-12);
  }
  SECTION("orthogonal factors") {
    REQUIRE_THAT(inner(kernel, half, late), Catch::Matchers::WithinAbs(0.0, 1e-15));
    const auto report = product_formula_check(kernel, half, late, 2, 1, 1000, 96u);
    CHECK(report.max_abs_deviation <= 1e-12);
  }
  SECTION("oblique factors, second order") {
    const auto report = product_formula_check(kernel, wide, overlap, 2, 2, 1000, 97u);
    CHECK(report.max_abs_deviation <= 1e-10);
  }
  SECTION("full order sweep stays at rounding level") {
    for (unsigned p = 0; p <= 4; ++p)
      for (unsigned q = 0; q <= 4 - p; ++q) {
        const auto report =
            product_formula_check(kernel, wide, overlap, p, q, 100, 98u);
        CHECK(report.max_abs_deviation <= 1e-10);
      }
  }
}

TEST_CASE("chaos levels are centered and carry the stated variance") {
  const FredholmKernel kernel = mercer_bm(64);
  const StepFunction h = StepFunction::indicator(kernel.grid, 0.5);
  const GridFunction c = wiener_coeffs(kernel, h);
  const double norm2 = quadrature_inner(kernel.grid, c.values, c.values);

  std::vector<double> weighted(kernel.grid.size());
  for (std::size_t j = 0; j < kernel.grid.size(); ++j)
    weighted[j] = c.values[Eigen::Index(j)] * std::sqrt(kernel.grid.weights[j]);

  const std::size_t n_draws = 1000000;
  std::vector<double> sum(5, 0.0), sum2(5, 0.0), sum4(5, 0.0);
  for (std::size_t d = 0; d < n_draws; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), 99u, d);
    double x = 0.0;
    for (std::size_t j = 0; j < weighted.size(); ++j)
      x += weighted[j] * noise.values[j];
    const double xi = x / std::sqrt(norm2);
    for (unsigned p = 1; p <= 4; ++p) {
      const double value = factorial_as_double(p) *
                           std::pow(std::sqrt(norm2), double(p)) *
                           hermite(p, xi);
      sum[p] += value;
      sum2[p] += value * value;
      sum4[p] += value * value * value * value;
    }
  }
  for (unsigned p = 1; p <= 4; ++p) {
    const double mean = sum[p] / double(n_draws);
    const double var = sum2[p] / double(n_draws) - mean * mean;
    const double m4 = sum4[p] / double(n_draws);
    const double se_mean = std::sqrt(var / double(n_draws));
    const double se_var =
        std::sqrt(std::max(0.0, m4 - var * var) / double(n_draws));
    const double stated = factorial_as_double(p) * std::pow(norm2, double(p));
    INFO("level " << p);
    CHECK(std::abs(mean) <= 4.0 * se_mean);
    CHECK(std::abs(var - stated) <= 4.0 * se_var);
  }
}

TEST_CASE("divergence of the truncated path is half the squared endpoint defect") {
  // delta(X 1_t) written through the second chaos level must equal
  // (X_t^2 - R(t, t)) / 2 for every draw, with X_t realized from the same
  // noise by the simulation map.
  const FredholmKernel kernel = mercer_bm(128);
  const double t = 0.5;
  const StepFunction h = StepFunction::indicator(kernel.grid, t);
  const std::size_t idx = kernel.grid.index_of(t);
  for (std::uint64_t d = 0; d < 32; ++d) {
    const NoiseVector noise = gaussian_noise(kernel.grid.size(), 100u, d);
    double xt = 0.0;
    for (std::size_t j = 0; j < kernel.grid.size(); ++j)
      xt += kernel.values(Eigen::Index(idx), Eigen::Index(j)) *
            std::sqrt(kernel.grid.weights[j]) * noise.values[j];
    const double divergence = 0.5 * mwi_rank_one(kernel, h, 2, noise);
    CHECK_THAT(divergence,
               Catch::Matchers::WithinAbs(0.5 * (xt * xt - t), 1e-12));
  }
}

TEST_CASE("growth envelope checks") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const TimeGrid grid = make_uniform_grid(1.0, 64);

  SECTION("tight constant fails where the polynomial escapes the envelope") {
    const ScalarFunction f =
        make_polynomial("x^2", {0.0, 0.0, 1.0}, GrowthEnvelope{3.0, 0.1});
    const auto report = growth_check(f, model, grid, 2001);
    CHECK(report.lambda_admissible);
    CHECK_FALSE(report.pass);
    CHECK(report.violated_component == "f");
    // x^2 > 3 e^{0.1 x^2} on |x| in (2.24, 4.25); the sweep runs from -6, so
    // the first offending sample sits at the outer edge of that band.
    CHECK(report.first_violation_x > -4.3);
    CHECK(report.first_violation_x < -4.1);
  }
  SECTION("wider constant passes") {
    const ScalarFunction f =
        make_polynomial("x^2", {0.0, 0.0, 1.0}, GrowthEnvelope{5.0, 0.1});
    const auto report = growth_check(f, model, grid, 2001);
    CHECK(report.pass);
    CHECK(std::isnan(report.first_violation_x));
  }
  SECTION("exponent must clear the variance bound strictly") {
    const ScalarFunction f =
        make_polynomial("x^2", {0.0, 0.0, 1.0}, GrowthEnvelope{5.0, 0.25});
    const auto report = growth_check(f, model, grid, 101);
    CHECK_FALSE(report.lambda_admissible);
    CHECK_FALSE(report.pass);
    CHECK(report.violated_component == "lambda");
    CHECK_THAT(report.lambda_bound, Catch::Matchers::WithinAbs(0.25, 1e-15));
  }
  SECTION("stock monomials carry admissible envelopes") {
    for (unsigned p = 1; p <= 4; ++p) {
      const auto report = growth_check(monomial(p), model, grid, 2001);
      INFO("monomial " << p);
      CHECK(report.pass);
    }
  }
}

TEST_CASE("pathwise change-of-variable remainder") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const TimeGrid grid = make_uniform_grid(1.0, 4);
  GridFunction path;
  path.grid = grid;
  path.values.resize(5);
  path.values << 0.0, 0.4, -0.2, 0.1, 0.3;

  SECTION("quadratic against hand value") {
    // f = x^2: remainder = X_t^2 - X_0^2 - sum d_i over s_i < t, with
    // d_i = 0.25 each for this grid.
    const ScalarFunction f = monomial(2);
    const double got = ito_lhs(model, f, path, 0.75);
    CHECK_THAT(got, Catch::Matchers::WithinAbs(0.1 * 0.1 - 0.0 - 0.75, 1e-14));
  }
  SECTION("cubic against hand value") {
    // f = x^3: remainder = X_t^3 - 3 sum X(s_i) d_i.
    const ScalarFunction f = monomial(3);
    const double got = ito_lhs(model, f, path, 1.0);
    const double correction = 3.0 * 0.25 * (0.0 + 0.4 - 0.2 + 0.1);
    CHECK_THAT(got, Catch::Matchers::WithinAbs(0.027 - correction, 1e-14));
  }
  SECTION("inadmissible envelope is rejected") {
    const ScalarFunction f =
        make_polynomial("x^2", {0.0, 0.0, 1.0}, GrowthEnvelope{5.0, 0.4});
    CHECK_THROWS_AS(ito_lhs(model, f, path, 0.5), GrowthConditionViolated);
  }
  SECTION("off-grid time is rejected") {
    CHECK_THROWS_AS(ito_lhs(model, monomial(2), path, 0.3), std::invalid_argument);
  }
}

TEST_CASE("duality harness ties out against per-path reconstruction") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_bm(32);
  const ScalarFunction f = monomial(2);
  const TestVariable G = TestVariable::monomial({1.0}, {2});
  const double t = 0.5;

  // One path: the report means must equal the quantities computed from the
  // identically seeded simulation, since path p consumes noise stream p.
  const auto report = ito_duality_check(model, kernel, f, t, G, 1, 101u);
  const NoiseVector noise = gaussian_noise(kernel.grid.size(), 101u, 0);
  GridFunction path;
  path.grid = kernel.grid;
  path.values.resize(Eigen::Index(kernel.grid.size()));
  for (std::size_t i = 0; i < kernel.grid.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kernel.grid.size(); ++j)
      acc += kernel.values(Eigen::Index(i), Eigen::Index(j)) *
             std::sqrt(kernel.grid.weights[j]) * noise.values[j];
    path.values[Eigen::Index(i)] = acc;
  }
  const double xT = path.values[Eigen::Index(kernel.grid.size() - 1)];
  const double lhs = xT * xT * ito_lhs(model, f, path, t);

  GridFunction u;
  u.grid = kernel.grid;
  u.values.resize(path.values.size());
  for (Eigen::Index i = 0; i < path.values.size(); ++i)
    u.values[i] = f.df(path.values[i]);
  const double rhs = 2.0 * xT * extended_inner_indicator(model, u, t, 1.0);

  CHECK_THAT(report.lhs_mean, Catch::Matchers::WithinAbs(lhs, 1e-12));
  CHECK_THAT(report.rhs_mean, Catch::Matchers::WithinAbs(rhs, 1e-12));
  CHECK(report.n_paths == 1);
  CHECK(report.seed == 101u);
}

TEST_CASE("duality holds for the quadratic flagship pair") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_bm(64);
  const ScalarFunction f = monomial(2);
  const TestVariable G = TestVariable::monomial({1.0}, {2});
  const auto report = ito_duality_check(model, kernel, f, 0.5, G, 100000, 102u);
  CHECK(report.pass);
  // Both sides estimate E[X_T^2 (X_t^2 - t)] = 2 R(T, t)^2 = 1/2.
  CHECK(std::abs(report.lhs_mean - 0.5) <= 4.0 * report.lhs_se);
  CHECK(std::abs(report.rhs_mean - 0.5) <= 4.0 * report.rhs_se);
  CHECK(report.lhs_se > 0.0);
  CHECK(report.rhs_se > 0.0);
}

TEST_CASE("duality batch matches the one-case entry point") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_bm(32);
  const std::vector<DualityCase> cases = {
      {monomial(2), TestVariable::monomial({1.0}, {2}), 0.5},
      {monomial(3), TestVariable::monomial({0.5, 1.0}, {1, 1}), 0.75},
  };
  const auto batch = ito_duality_batch(model, kernel, cases, 5000, 103u);
  REQUIRE(batch.size() == 2);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto solo = ito_duality_check(model, kernel, cases[i].f, cases[i].t,
                                        cases[i].G, 5000, 103u);
    CHECK(batch[i].lhs_mean == solo.lhs_mean);
    CHECK(batch[i].rhs_mean == solo.rhs_mean);
    CHECK(batch[i].lhs_se == solo.lhs_se);
    CHECK(batch[i].rhs_se == solo.rhs_se);
  }
}

TEST_CASE("duality harness argument gates") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_bm(16);
  const TestVariable G = TestVariable::monomial({1.0}, {2});
  CHECK_THROWS_AS(
      ito_duality_check(model, kernel, monomial(2), 0.5, G, 0, 1u),
      std::invalid_argument);

  // Tabulated covariances make no bounded-variation promise, so the extended
  // pairing on the right-hand side is unavailable.
  const TimeGrid grid = kernel.grid;
  Eigen::MatrixXd values(grid.size(), grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j)
      values(Eigen::Index(i), Eigen::Index(j)) =
          std::min(grid.nodes[i], grid.nodes[j]);
  const CovarianceModel tabulated = CovarianceModel::user_tabulated(grid, values);
  CHECK_THROWS_AS(
      ito_duality_check(tabulated, kernel, monomial(2), 0.5, G, 10, 1u),
      UnsupportedModel);
}

TEST_CASE("test variable construction and derivatives") {
  CHECK_THROWS_AS(TestVariable({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(TestVariable({0.5}, {TestVariable::Term{1.0, {1, 2}}}),
                  std::invalid_argument);

  // G(x, y) = 2 x^2 y + y^3 at anchors (0.25, 0.75).
  const TestVariable G(
      {0.25, 0.75},
      {TestVariable::Term{2.0, {2, 1}}, TestVariable::Term{1.0, {0, 3}}});
  CHECK(G.degree() == 3);
  const std::vector<double> x = {3.0, 2.0};
  CHECK_THAT(G.eval(x), Catch::Matchers::WithinAbs(36.0 + 8.0, 1e-13));
  CHECK_THAT(G.partial(0, x), Catch::Matchers::WithinAbs(24.0, 1e-13));
  CHECK_THAT(G.partial(1, x), Catch::Matchers::WithinAbs(18.0 + 12.0, 1e-13));
}
