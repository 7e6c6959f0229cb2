#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/numerics.hpp"
#include "fredholm/processes.hpp"
#include "fredholm/rng.hpp"
#include "fredholm/transfer.hpp"

using namespace fredholm;

namespace {

FredholmKernel indicator_kernel(std::size_t cells) {
  return known_kernel("brownian-motion-indicator", make_uniform_grid(1.0, cells));
}

FredholmKernel mercer_kernel(const CovarianceModel& model, std::size_t cells) {
  return build_fredholm_kernel(
      mercer_decompose(model, make_uniform_grid(model.horizon(), cells)));
}

Eigen::MatrixXd weighted_reconstruction(const FredholmKernel& kernel) {
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = kernel.grid.weights[std::size_t(j)];
  return kernel.values * w.asDiagonal() * kernel.values.transpose();
}

double integrated_truncation(const SeriesExpansion& expansion,
                             const CovarianceModel& model) {
  double sum = 0.0;
  for (std::size_t i = 0; i < expansion.grid.size(); ++i)
    sum += expansion.grid.weights[i] *
           series_truncation_error(expansion, model, expansion.grid.nodes[i]);
  return sum;
}

}  // namespace

TEST_CASE("simulation is seeded, sized and reproducible") {
  const FredholmKernel kernel = indicator_kernel(16);
  REQUIRE_THROWS_AS(simulate(kernel, 0, 1), std::invalid_argument);

  const PathEnsemble a = simulate(kernel, 7, 5);
  const PathEnsemble b = simulate(kernel, 7, 5);
  const PathEnsemble c = simulate(kernel, 7, 6);
  REQUIRE(a.n_paths() == 7);
  REQUIRE(a.paths.cols() == 17);
  REQUIRE(a.seed == 5);
  REQUIRE(a.kernel_provenance == "closed-form");
  REQUIRE(a.paths == b.paths);
  REQUIRE((a.paths - c.paths).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("bridge-kernel ensembles return to zero at the horizon") {
  const FredholmKernel kernel =
      mercer_kernel(CovarianceModel::brownian_bridge(1.0), 64);
  const PathEnsemble ens = simulate(kernel, 256, 202);
  // The factorized covariance vanishes on the whole boundary row, so every
  // draw starts and ends at zero up to eigensolver rounding.
  REQUIRE(ens.paths.col(0).cwiseAbs().maxCoeff() <= 1e-9);
  REQUIRE(ens.paths.col(64).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("degenerate kernel draws are multiples of the profile") {
  const TimeGrid grid = make_uniform_grid(2.0, 16);
  const auto profile = [](double t) { return 1.0 + t; };
  const FredholmKernel kernel = known_kernel("degenerate-rank-one", grid, profile);
  const PathEnsemble ens = simulate(kernel, 4, 203);
  for (Eigen::Index p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < grid.size(); ++i) {
      // X_p(t) = f(t) Z_p, so cross ratios against the first node cancel Z_p.
      const double lhs = ens.paths(p, Eigen::Index(i)) * profile(grid.nodes[0]);
      const double rhs = ens.paths(p, 0) * profile(grid.nodes[i]);
      REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));
    }
}

TEST_CASE("simulated ensembles reproduce the factorized covariance") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 32);
  const PathEnsemble ens = simulate(kernel, 40000, 204);
  const std::vector<std::size_t> idx = {8, 16, 24, 32};
  const CovarianceEstimate est = empirical_covariance(ens, idx);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double target = model(kernel.grid.nodes[idx[a]], kernel.grid.nodes[idx[b]]);
      const double gap = std::abs(est.covariance(Eigen::Index(a), Eigen::Index(b)) - target);
      REQUIRE(gap <= 4.0 * est.standard_error(Eigen::Index(a), Eigen::Index(b)));
    }
}

TEST_CASE("volterra tables populate the lower triangle and verify their gates") {
  const TimeGrid grid = make_uniform_grid(1.0, 8);
  const VolterraKernel ell =
      make_volterra(grid, [](double s, double u) { return s + 2.0 * u; });
  REQUIRE(ell.values(1, 0) == Catch::Approx(grid.nodes[1]).margin(1e-15));
  REQUIRE(ell.values(0, 1) == 0.0);
  REQUIRE(ell.values(3, 3) == Catch::Approx(3.0 * grid.nodes[3]).margin(1e-15));

  REQUIRE_THROWS_AS(exponential_volterra(grid, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(exponential_volterra(grid, -1.0), std::invalid_argument);
  const FredholmKernel kernel = indicator_kernel(8);
  REQUIRE_THROWS_AS(langevin_kernel(kernel, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(langevin_simulate_euler(kernel, -2.0, 4, 1), std::invalid_argument);

  const VolterraKernel mismatched = exponential_volterra(make_uniform_grid(1.0, 16), 1.0);
  REQUIRE_THROWS_AS(volterra_perturb(kernel, mismatched), std::invalid_argument);
}

TEST_CASE("a zero perturbation returns the kernel unchanged") {
  const FredholmKernel kernel = indicator_kernel(32);
  const VolterraKernel zero =
      make_volterra(kernel.grid, [](double, double) { return 0.0; });
  const FredholmKernel same = volterra_perturb(kernel, zero);
  REQUIRE(same.values == kernel.values);
  REQUIRE_FALSE(same.symmetric);
  REQUIRE(same.provenance == "derived");
}

TEST_CASE("the relaxation kernel of the indicator is the exact exponential response") {
  const double theta = 1.0;
  const FredholmKernel kernel = indicator_kernel(64);
  const FredholmKernel relaxed = langevin_kernel(kernel, theta);
  const auto& nodes = kernel.grid.nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const double expected =
          k < i ? std::exp(-theta * (nodes[i] - nodes[k])) : 0.0;
      REQUIRE(relaxed.values(Eigen::Index(i), Eigen::Index(k)) ==
              Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("cell-frozen perturbation reproduces the exponential response to trapezoid accuracy") {
  const double theta = 1.0;
  const FredholmKernel kernel = indicator_kernel(64);
  const FredholmKernel perturbed =
      volterra_perturb(kernel, exponential_volterra(kernel.grid, theta));
  const FredholmKernel relaxed = langevin_kernel(kernel, theta);
  const auto& nodes = kernel.grid.nodes;

  double worst_closed = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const double expected =
          k < i ? std::exp(-theta * (nodes[i] - nodes[k])) : 0.0;
      worst_closed = std::max(
          worst_closed,
          std::abs(perturbed.values(Eigen::Index(i), Eigen::Index(k)) - expected));
    }
  // Only the trapezoid error of the smooth exponential remains, about
  // h^2 theta^2 / 12 accumulated over a unit interval.
  REQUIRE(worst_closed <= 3e-5);
  REQUIRE((perturbed.values - relaxed.values).cwiseAbs().maxCoeff() <= 3e-5);
}

TEST_CASE("a vanishing relaxation rate perturbs nothing") {
  const FredholmKernel kernel = indicator_kernel(32);
  const FredholmKernel relaxed = langevin_kernel(kernel, 1e-8);
  REQUIRE((relaxed.values - kernel.values).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("the relaxation response induces a genuinely different law") {
  const FredholmKernel kernel = indicator_kernel(32);
  const FredholmKernel relaxed = langevin_kernel(kernel, 1.0);
  REQUIRE(unitary_equivalence_check(kernel, kernel, 1e-12).pass);
  const EquivalenceReport report = unitary_equivalence_check(relaxed, kernel, 1e-6);
  REQUIRE_FALSE(report.pass);
  REQUIRE(report.max_abs_diff > 0.1);
}

TEST_CASE("relaxed ensembles carry the stationary variance") {
  const double theta = 1.0;
  const FredholmKernel kernel = indicator_kernel(128);
  const FredholmKernel relaxed = langevin_kernel(kernel, theta);
  const PathEnsemble ens = simulate(relaxed, 20000, 205);
  const CovarianceEstimate est = empirical_covariance(ens, {128});
  // Var Y(1) = (1 - e^{-2 theta}) / (2 theta); the node quadrature drops the
  // half cell at the horizon, which sits well inside the sampling error here.
  const double target = (1.0 - std::exp(-2.0 * theta)) / (2.0 * theta);
  REQUIRE(std::abs(est.covariance(0, 0) - target) <= 4.0 * est.standard_error(0, 0));
}

TEST_CASE("euler integration agrees with the exact response law") {
  const double theta = 1.0;
  const FredholmKernel driver = indicator_kernel(128);
  const PathEnsemble euler = langevin_simulate_euler(driver, theta, 20000, 206);
  REQUIRE(euler.kernel_provenance == "euler");
  REQUIRE(euler.paths.col(0).cwiseAbs().maxCoeff() == 0.0);

  const CovarianceEstimate est = empirical_covariance(euler, {128});
  const double target = (1.0 - std::exp(-2.0 * theta)) / (2.0 * theta);
  const double dt = 1.0 / 128.0;
  REQUIRE(std::abs(est.covariance(0, 0) - target) <=
          4.0 * est.standard_error(0, 0) + 2.0 * dt);
}

TEST_CASE("full eigen-series reconstruction leaves no residual variance") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 64);
  const SeriesExpansion full = series_expand(kernel, "mercer-eigen", 65);
  for (double t : kernel.grid.nodes) {
    const double err = series_truncation_error(full, model, t);
    REQUIRE(err <= 1e-8);
    REQUIRE(err >= -1e-10);
  }
}

TEST_CASE("leading eigen-series function matches the known first mode") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 64);
  const SeriesExpansion series = series_expand(kernel, "mercer-eigen", 1);
  // a_1(t) = sqrt(lambda_1) sqrt(2) sin(pi t / 2) with lambda_1 = (2/pi)^2,
  // so |a_1(1/2)| = 2/pi up to the eigensolver's sign choice.
  const double value = series.functions(Eigen::Index(kernel.grid.index_of(0.5)), 0);
  REQUIRE(std::abs(std::abs(value) - 2.0 / M_PI) <= 5e-3);
}

TEST_CASE("series truncation error shrinks with the cut and favors the eigen basis") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 64);
  double previous = 1e9;
  for (std::size_t m : {1, 5, 10}) {
    const SeriesExpansion eigen = series_expand(kernel, "mercer-eigen", m);
    const SeriesExpansion trig = series_expand(kernel, "trigonometric", m);
    for (double t : {0.25, 0.5, 0.75}) {
      REQUIRE(series_truncation_error(eigen, model, t) >= -1e-10);
      REQUIRE(series_truncation_error(trig, model, t) >= -1e-10);
    }
    const double ie = integrated_truncation(eigen, model);
    const double it = integrated_truncation(trig, model);
    REQUIRE(ie <= it + 1e-12);
    REQUIRE(ie <= previous + 1e-12);
    previous = ie;
  }
}

TEST_CASE("ten-mode integrated truncation error matches the spectral tail") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 256);
  const SeriesExpansion series = series_expand(kernel, "mercer-eigen", 10);
  // Spectral tail sum_{k > 10} ((k - 1/2) pi)^{-2} = (psi'(10.5)) / pi^2.
  REQUIRE(integrated_truncation(series, model) ==
          Catch::Approx(0.0101231).margin(1e-4));
}

TEST_CASE("haar series handles dyadic counts and rejects collapse") {
  const FredholmKernel kernel = mercer_kernel(CovarianceModel::brownian_motion(1.0), 64);
  const SeriesExpansion haar = series_expand(kernel, "haar", 8);
  REQUIRE(haar.basis == "haar");
  REQUIRE(haar.functions.cols() == 8);

  const FredholmKernel coarse = indicator_kernel(8);
  REQUIRE_THROWS_AS(series_expand(coarse, "haar", 12), InvalidBasis);
  REQUIRE_THROWS_AS(series_expand(kernel, "legendre", 4), InvalidBasis);
  REQUIRE_THROWS_AS(series_expand(kernel, "mercer-eigen", 70), InvalidBasis);
}

TEST_CASE("bridge data on the indicator kernel has the closed-form gram") {
  const FredholmKernel kernel = indicator_kernel(64);
  const double h = 1.0 / 64.0;
  const std::vector<StepFunction> gs = {
      StepFunction::constant(kernel.grid, 1.0),
      StepFunction::indicator(kernel.grid, 0.5)};
  const BridgeSpec spec = bridge_gram(kernel, gs);

  // K* applied to an indicator of [0, b) is the kernel row difference
  // K(b, s) - K(0, s), an indicator of s in [0, b) here.
  for (std::size_t j = 0; j < kernel.grid.size(); ++j) {
    const double s = kernel.grid.nodes[j];
    REQUIRE(spec.transferred(Eigen::Index(j), 0) == (s < 1.0 ? 1.0 : 0.0));
    REQUIRE(spec.transferred(Eigen::Index(j), 1) == (s < 0.5 ? 1.0 : 0.0));
  }
  REQUIRE(spec.gram(0, 0) == Catch::Approx(1.0 - h / 2.0).margin(1e-12));
  REQUIRE(spec.gram(1, 1) == Catch::Approx(0.5 - h / 2.0).margin(1e-12));
  REQUIRE(spec.gram(0, 1) == Catch::Approx(0.5 - h / 2.0).margin(1e-12));
  REQUIRE(spec.gram(1, 0) == spec.gram(0, 1));

  const BridgeSpec single =
      bridge_gram(kernel, {StepFunction::constant(kernel.grid, 1.0)});
  for (std::size_t l = 1; l < kernel.grid.size(); ++l)
    REQUIRE(single.running_gram[l](0, 0) ==
            Catch::Approx(1.0 - kernel.grid.nodes[l]).margin(1e-12));
  REQUIRE(single.running_gram[0](0, 0) == Catch::Approx(1.0 - h / 2.0).margin(1e-12));
}

TEST_CASE("bridge construction rejects degenerate functional sets") {
  const FredholmKernel kernel = indicator_kernel(64);
  REQUIRE_THROWS_AS(bridge_gram(kernel, {}), std::invalid_argument);

  const StepFunction one = StepFunction::constant(kernel.grid, 1.0);
  REQUIRE_THROWS_AS(bridge_gram(kernel, {one, one}), DependentFunctionals);

  // Conditioning a bridge-type kernel on the full-interval increment asks for
  // a functional the process already annihilates, whichever representation
  // of the bridge is in play.
  const FredholmKernel closed =
      known_kernel("brownian-bridge-orthogonal", kernel.grid);
  REQUIRE_THROWS_AS(bridge_gram(closed, {StepFunction::constant(closed.grid, 1.0)}),
                    DependentFunctionals);
  const FredholmKernel factored =
      mercer_kernel(CovarianceModel::brownian_bridge(1.0), 64);
  REQUIRE_THROWS_AS(
      bridge_gram(factored, {StepFunction::constant(factored.grid, 1.0)}),
      DependentFunctionals);
}

TEST_CASE("orthogonal bridging zeroes the conditioned functionals pathwise") {
  const FredholmKernel kernel = mercer_kernel(CovarianceModel::brownian_motion(1.0), 64);
  const BridgeSpec spec =
      bridge_gram(kernel, {StepFunction::constant(kernel.grid, 1.0)});
  const PathEnsemble bridged =
      bridge_orthogonal(kernel, spec, simulate(kernel, 512, 207));

  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  Eigen::VectorXd ell = Eigen::VectorXd::Zero(n);
  ell[0] = -1.0;
  ell[n - 1] = 1.0;
  REQUIRE((bridged.paths * ell).cwiseAbs().maxCoeff() <= 1e-10);
  REQUIRE(bridged.paths.col(n - 1).cwiseAbs().maxCoeff() <= 1e-10);
  REQUIRE(bridged.kernel_provenance.find("+bridge-orthogonal") != std::string::npos);

  PathEnsemble foreign = simulate(indicator_kernel(32), 4, 208);
  REQUIRE_THROWS_AS(bridge_orthogonal(kernel, spec, foreign), std::invalid_argument);
}

TEST_CASE("orthogonal bridging is exact gaussian conditioning") {
  const FredholmKernel kernel = mercer_kernel(CovarianceModel::brownian_motion(1.0), 32);
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  const std::vector<StepFunction> gs = {
      StepFunction::constant(kernel.grid, 1.0),
      StepFunction::indicator(kernel.grid, 0.5)};
  const BridgeSpec spec = bridge_gram(kernel, gs);

  // Feeding unit-vector paths through the projection recovers its matrix M,
  // so the bridged law is M^T R M for the simulated law R = K W K^T.
  PathEnsemble probe;
  probe.grid = kernel.grid;
  probe.paths = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd m = bridge_orthogonal(kernel, spec, probe).paths;

  Eigen::MatrixXd ells = Eigen::MatrixXd::Zero(n, 2);
  ells(n - 1, 0) = 1.0;
  ells(0, 0) = -1.0;
  ells(Eigen::Index(kernel.grid.index_of(0.5)), 1) = 1.0;
  ells(0, 1) = -1.0;
  const Eigen::MatrixXd r = weighted_reconstruction(kernel);
  const Eigen::MatrixXd cross = r * ells;
  const Eigen::MatrixXd sigma = ells.transpose() * r * ells;
  const Eigen::MatrixXd conditioned =
      r - cross * sigma.inverse() * cross.transpose();

  const Eigen::MatrixXd law = m.transpose() * r * m;
  REQUIRE((law - conditioned).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("orthogonal bridging of brownian motion gives the brownian bridge law") {
  const CovarianceModel model = CovarianceModel::brownian_motion(1.0);
  const FredholmKernel kernel = mercer_kernel(model, 64);
  const BridgeSpec spec =
      bridge_gram(kernel, {StepFunction::constant(kernel.grid, 1.0)});
  const PathEnsemble bridged =
      bridge_orthogonal(kernel, spec, simulate(kernel, 20000, 209));

  const std::vector<std::size_t> idx = {16, 32, 48};
  const CovarianceEstimate est = empirical_covariance(bridged, idx);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double ta = kernel.grid.nodes[idx[a]];
      const double tb = kernel.grid.nodes[idx[b]];
      const double target = std::min(ta, tb) - ta * tb;
      const double gap =
          std::abs(est.covariance(Eigen::Index(a), Eigen::Index(b)) - target);
      REQUIRE(gap <= 4.0 * est.standard_error(Eigen::Index(a), Eigen::Index(b)));
    }
}

TEST_CASE("canonical bridging pins the horizon and matches its ensemble") {
  const FredholmKernel kernel = indicator_kernel(64);
  const BridgeSpec spec =
      bridge_gram(kernel, {StepFunction::constant(kernel.grid, 1.0)});

  const NoiseVector noise = gaussian_noise(kernel.grid.size(), 210, 0);
  const GridFunction path = bridge_canonical(kernel, spec, noise);
  REQUIRE(path.values[0] == 0.0);
  REQUIRE(path.values[64] == 0.0);

  const PathEnsemble ens = bridge_canonical_ensemble(kernel, spec, 5, 210);
  REQUIRE(ens.kernel_provenance == "closed-form+bridge-canonical");
  for (std::size_t p = 0; p < 5; ++p) {
    const GridFunction solo =
        bridge_canonical(kernel, spec, gaussian_noise(kernel.grid.size(), 210, p));
    REQUIRE((ens.paths.row(Eigen::Index(p)).transpose() - solo.values)
                .cwiseAbs()
                .maxCoeff() <= 1e-14);
  }

  REQUIRE_THROWS_AS(bridge_canonical_ensemble(kernel, spec, 0, 1),
                    std::invalid_argument);
  const NoiseVector short_noise = gaussian_noise(8, 210, 0);
  REQUIRE_THROWS_AS(bridge_canonical(kernel, spec, short_noise),
                    std::invalid_argument);
}

TEST_CASE("canonical bridge law approaches the conditioned law from within the filtration") {
  const FredholmKernel kernel = indicator_kernel(256);
  const BridgeSpec spec =
      bridge_gram(kernel, {StepFunction::constant(kernel.grid, 1.0)});
  const Eigen::MatrixXd map = detail::canonical_path_map(kernel, spec);
  const Eigen::MatrixXd law = map * map.transpose();

  const Eigen::MatrixXd r = weighted_reconstruction(kernel);
  const auto n = static_cast<Eigen::Index>(kernel.grid.size());
  Eigen::VectorXd ell = Eigen::VectorXd::Zero(n);
  ell[0] = -1.0;
  ell[n - 1] = 1.0;
  const Eigen::VectorXd cross = r * ell;
  const double sigma = ell.dot(r * ell);
  const Eigen::MatrixXd conditioned = r - cross * cross.transpose() / sigma;

  // The drift quadrature is first order in the cell width, so the law of the
  // filtration-respecting construction differs from exact conditioning by
  // O(h); these margins sit a few times above the measured defect at h=1/256.
  const std::size_t q1 = kernel.grid.index_of(0.25);
  const std::size_t q2 = kernel.grid.index_of(0.5);
  const std::size_t q3 = kernel.grid.index_of(0.875);
  const auto at = [&](std::size_t a, std::size_t b) {
    return std::abs(law(Eigen::Index(a), Eigen::Index(b)) -
                    conditioned(Eigen::Index(a), Eigen::Index(b)));
  };
  REQUIRE(at(q1, q3) <= 1.5e-3);
  REQUIRE(at(q2, q2) <= 3e-3);
  REQUIRE(at(q3, q3) <= 6e-3);

  const double bb_value = law(Eigen::Index(q1), Eigen::Index(q3));
  REQUIRE(bb_value == Catch::Approx(0.25 - 0.25 * 0.875).margin(1.5e-3));
}

TEST_CASE("ensemble statistics helpers validate their inputs") {
  const FredholmKernel kernel = indicator_kernel(2);
  PathEnsemble tiny;
  tiny.grid = kernel.grid;
  tiny.paths.resize(1, 3);
  REQUIRE_THROWS_AS(empirical_covariance(tiny, {0}), std::invalid_argument);

  PathEnsemble hand;
  hand.grid = kernel.grid;
  hand.paths.resize(3, 3);
  hand.paths << 1.0, 2.0, 0.0, 3.0, 6.0, 0.0, 5.0, 4.0, 0.0;
  REQUIRE_THROWS_AS(empirical_covariance(hand, {3}), std::invalid_argument);

  const CovarianceEstimate est = empirical_covariance(hand, {0, 1});
  REQUIRE(est.covariance(0, 0) == Catch::Approx(4.0).margin(1e-14));
  REQUIRE(est.covariance(1, 1) == Catch::Approx(4.0).margin(1e-14));
  REQUIRE(est.covariance(0, 1) == Catch::Approx(2.0).margin(1e-14));
  // Three points leave the fourth-moment spread below the squared covariance,
  // so the clamped variance estimate collapses to zero.
  REQUIRE(est.standard_error(0, 0) == 0.0);
  REQUIRE(est.standard_error(0, 1) ==
          Catch::Approx(std::sqrt((16.0 / 3.0 - 4.0) / 3.0)).margin(1e-12));
}
