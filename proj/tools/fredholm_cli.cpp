// Command-line front end.  Every run resolves a flat key=value configuration
// (config file first, flags override), re-records the resolved values, and
// stamps the canonical form plus its hash into the manifest it writes.  Output
// location and thread count come from flags or the environment and are never
// part of the configuration, so the bytes a run produces depend only on the
// configuration itself.
//
// Exit codes: 0 success, 1 usage error, 2 precondition or input failure,
// 3 statistical check failed.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fredholm/chaos.hpp"
#include "fredholm/common.hpp"
#include "fredholm/covariance.hpp"
#include "fredholm/factorize.hpp"
#include "fredholm/io.hpp"
#include "fredholm/numerics.hpp"
#include "fredholm/processes.hpp"
#include "fredholm/run_config.hpp"
#include "fredholm/transfer.hpp"

namespace {

using namespace fredholm;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError {
  std::string message;
};

// ---------------------------------------------------------------------------
// model grammar

std::map<std::string, std::string> parse_kv_list(const std::string& text,
                                                 const std::string& what) {
  std::map<std::string, std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string piece = text.substr(start, comma - start);
    const std::size_t eq = piece.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == piece.size())
      throw std::invalid_argument(what + ": expected key=value, got '" + piece +
                                  "'");
    out[piece.substr(0, eq)] = piece.substr(eq + 1);
    start = comma + 1;
  }
  return out;
}

double kv_double(const std::map<std::string, std::string>& kv,
                 const std::string& key, const std::string& what) {
  const auto it = kv.find(key);
  if (it == kv.end())
    throw std::invalid_argument(what + ": missing '" + key + "='");
  return parse_double(it->second);
}

struct ParsedModel {
  CovarianceModel model;
  std::optional<TimeGrid> tabulated_grid;
  std::function<double(double)> profile;  // rank-one only
  std::string canonical;
};

// Grammar: bm | bb | fbm:H=<h> | ou[:theta=<t>,sigma=<s>] |
// rank-one:f=<t|1|1+t> | series:rank=<m> | tabulated:file=<path>[,bv=true].
ParsedModel parse_model_spec(const std::string& spec, double T) {
  const std::size_t colon = spec.find(':');
  const std::string kind =
      spec.substr(0, colon == std::string::npos ? spec.size() : colon);
  const std::string rest =
      colon == std::string::npos ? "" : spec.substr(colon + 1);

  if (kind == "bm")
    return {CovarianceModel::brownian_motion(T), std::nullopt, nullptr, "bm"};
  if (kind == "bb")
    return {CovarianceModel::brownian_bridge(T), std::nullopt, nullptr, "bb"};
  if (kind == "fbm") {
    const double H = kv_double(parse_kv_list(rest, "fbm"), "H", "fbm");
    return {CovarianceModel::fractional_brownian(T, H), std::nullopt, nullptr,
            "fbm:H=" + format_double(H)};
  }
  if (kind == "ou") {
    const auto kv = parse_kv_list(rest, "ou");
    const double theta =
        kv.count("theta") ? parse_double(kv.at("theta")) : 1.0;
    const double sigma =
        kv.count("sigma") ? parse_double(kv.at("sigma")) : 1.0;
    return {CovarianceModel::ornstein_uhlenbeck(T, theta, sigma), std::nullopt,
            nullptr,
            "ou:theta=" + format_double(theta) +
                ",sigma=" + format_double(sigma)};
  }
  if (kind == "rank-one") {
    const auto kv = parse_kv_list(rest, "rank-one");
    const auto it = kv.find("f");
    if (it == kv.end())
      throw std::invalid_argument("rank-one: missing 'f=' (one of t, 1, 1+t)");
    std::function<double(double)> f;
    if (it->second == "t")
      f = [](double t) { return t; };
    else if (it->second == "1")
      f = [](double) { return 1.0; };
    else if (it->second == "1+t")
      f = [](double t) { return 1.0 + t; };
    else
      throw std::invalid_argument("rank-one: profile must be one of t, 1, 1+t");
    return {CovarianceModel::rank_one(T, f, it->second), std::nullopt, f,
            "rank-one:f=" + it->second};
  }
  if (kind == "series") {
    const double rank = kv_double(parse_kv_list(rest, "series"), "rank",
                                  "series");
    if (!(rank >= 1.0) || rank != std::floor(rank) || rank > 4096.0)
      throw std::invalid_argument("series: rank must be an integer >= 1");
    return {CovarianceModel::truncated_series(T, unsigned(rank)), std::nullopt,
            nullptr, "series:rank=" + format_double(rank)};
  }
  if (kind == "tabulated") {
    const auto kv = parse_kv_list(rest, "tabulated");
    const auto it = kv.find("file");
    if (it == kv.end())
      throw std::invalid_argument("tabulated: missing 'file=<csv path>'");
    bool bv = false;
    if (kv.count("bv")) {
      const std::string& v = kv.at("bv");
      if (v == "true" || v == "1")
        bv = true;
      else if (v == "false" || v == "0")
        bv = false;
      else
        throw std::invalid_argument("tabulated: bv must be true or false");
    }
    TabulatedCovariance table = read_covariance_table(it->second, bv);
    std::string canonical = "tabulated:file=" + it->second;
    if (bv) canonical += ",bv=true";
    return {std::move(table.model), std::move(table.grid), nullptr,
            std::move(canonical)};
  }
  throw std::invalid_argument(
      "unknown model '" + spec +
      "' (grammar: bm | bb | fbm:H=.. | ou[:theta=..,sigma=..] | "
      "rank-one:f=.. | series:rank=.. | tabulated:file=..[,bv=true])");
}

// ---------------------------------------------------------------------------
// configuration resolution

TimeGrid resolve_grid(const ParsedModel& pm, RunConfig& config,
                      std::size_t default_n) {
  if (pm.tabulated_grid) {
    // Tabulated input carries its own grid; record what it resolves to.
    config.set("grid.rule", "trapezoid");
    config.set("grid.n", std::to_string(pm.tabulated_grid->size() - 1));
    return *pm.tabulated_grid;
  }
  const std::string rule = config.get_string("grid.rule", "trapezoid");
  const std::size_t n = config.get_size("grid.n", default_n);
  config.set("grid.rule", rule);
  config.set("grid.n", std::to_string(n));
  const double T = pm.model.horizon();
  if (rule == "trapezoid") return make_uniform_grid(T, n);
  if (rule == "gauss-legendre") return make_gauss_legendre_grid(T, n);
  throw std::invalid_argument(
      "grid.rule must be 'trapezoid' (n subintervals) or 'gauss-legendre' (n "
      "nodes)");
}

struct Resolved {
  ParsedModel pm;
  TimeGrid grid;
};

Resolved resolve_model_and_grid(RunConfig& config, std::size_t default_n,
                                const std::string& command,
                                bool model_required) {
  if (!config.has("model") && model_required)
    throw UsageError{command +
                     ": missing required --model (or a model= line in the "
                     "--config file); see 'fredholm " +
                     command + " --help'"};
  const double T = config.get_double("T", 1.0);
  ParsedModel pm = parse_model_spec(config.get_string("model", "bm"), T);
  config.set("model", pm.canonical);
  config.set("T", format_double(pm.model.horizon()));
  TimeGrid grid = resolve_grid(pm, config, default_n);
  return {std::move(pm), std::move(grid)};
}

struct Factored {
  TraceEstimate trace_estimate;
  MercerDecomposition mercer;
  FredholmKernel kernel;
  FactorizationResidual residual;
};

// Every square-root build goes through the trace gate first: a covariance
// whose diagonal fails to integrate has no square-integrable kernel, and the
// spectral solve would silently produce garbage for it.
Factored factor_model(const CovarianceModel& model, const TimeGrid& grid,
                      RunConfig& config) {
  const double target = config.get_double("trace-fraction", 1.0 - 1e-10);
  const double clip = config.get_double("clip", 1e-12);
  config.set("trace-fraction", format_double(target));
  config.set("clip", format_double(clip));

  Factored f;
  f.trace_estimate = trace(model, grid);
  if (!f.trace_estimate.finite)
    throw DegenerateModel(
        "trace condition violated: int_0^T R(t,t) dt must be finite for a "
        "square-integrable factorization kernel to exist, but the quadrature "
        "does not stabilize under refinement (" +
        format_double(f.trace_estimate.value) + " vs " +
        format_double(f.trace_estimate.refined_value) + ")");
  f.mercer = mercer_decompose(model, grid, target, clip);
  f.kernel = build_fredholm_kernel(f.mercer);
  f.residual = factorization_residual(f.kernel, model);
  return f;
}

// ---------------------------------------------------------------------------
// manifest pieces

json manifest_base(const std::string& command, const RunConfig& config) {
  json m;
  m["command"] = command;
  m["config_hash"] = config.hash_hex();
  m["config"] = config.canonical_text();
  return m;
}

json trace_json(const TraceEstimate& t) {
  json j;
  j["value"] = t.value;
  j["refined_value"] = t.refined_value;
  j["finite"] = t.finite;
  return j;
}

json residual_json(const FactorizationResidual& r) {
  json j;
  j["abs"] = r.abs;
  j["rel"] = r.rel;
  return j;
}

fs::path resolve_out_dir(const std::string& flag_value) {
  std::string dir = flag_value;
  if (dir.empty()) {
    const char* env = std::getenv("FREDHOLM_OUT");
    dir = (env && *env) ? env : ".";
  }
  fs::create_directories(dir);
  return fs::path(dir);
}

std::vector<std::size_t> probe_indices(std::size_t grid_size) {
  std::vector<std::size_t> out;
  for (double q : {0.125, 0.25, 0.5, 0.75, 0.875}) {
    const auto idx =
        static_cast<std::size_t>(std::llround(q * double(grid_size - 1)));
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

PathEnsemble head_paths(const PathEnsemble& ensemble, std::size_t count) {
  PathEnsemble out;
  out.grid = ensemble.grid;
  out.seed = ensemble.seed;
  out.kernel_provenance = ensemble.kernel_provenance;
  const auto rows = std::min<Eigen::Index>(Eigen::Index(count),
                                           ensemble.paths.rows());
  out.paths = ensemble.paths.topRows(rows);
  return out;
}

double safe_z(double diff, double se) {
  if (se > 0.0) return diff / se;
  return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// commands

int cmd_factorize(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 256, "factorize", true);
  const Factored f = factor_model(pm.model, grid, config);
  const PsdReport psd = check_psd(gram(pm.model, grid));
  write_kernel(f.kernel, out, "kernel", f.residual.abs);

  json m = manifest_base("factorize", config);
  m["trace"] = trace_json(f.trace_estimate);
  m["trace_fraction_captured"] = f.mercer.trace_fraction;
  m["rank"] = f.mercer.rank();
  m["residual"] = residual_json(f.residual);
  m["psd"]["min_eigenvalue"] = psd.min_eigenvalue;
  m["psd"]["max_eigenvalue"] = psd.max_eigenvalue;
  m["psd"]["pass"] = psd.pass;
  m["outputs"] = json::array({"kernel.csv", "kernel.json"});
  write_json(out / "factorize_manifest.json", m);
  return 0;
}

int cmd_simulate(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 256, "simulate", false);
  const std::size_t paths = config.get_size("paths", 1000);
  const std::uint64_t seed = config.get_uint64("seed", 42);
  config.set("paths", std::to_string(paths));
  config.set("seed", std::to_string(seed));

  const Factored f = factor_model(pm.model, grid, config);
  const PathEnsemble ensemble = simulate(f.kernel, paths, seed);
  write_ensemble(ensemble, out, "ensemble");

  json m = manifest_base("simulate", config);
  m["seed"] = seed;
  m["n_paths"] = paths;
  m["kernel_provenance"] = f.kernel.provenance;
  m["trace"] = trace_json(f.trace_estimate);
  m["residual"] = residual_json(f.residual);
  m["outputs"] = json::array({"ensemble.csv", "ensemble.json"});
  write_json(out / "simulate_manifest.json", m);
  return 0;
}

std::vector<StepFunction> parse_functionals(const std::string& spec,
                                            const TimeGrid& grid) {
  std::vector<StepFunction> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t semi = spec.find(';', start);
    if (semi == std::string::npos) semi = spec.size();
    const std::string token = spec.substr(start, semi - start);
    if (token == "const") {
      out.push_back(StepFunction::constant(grid, 1.0));
    } else if (token.rfind("indicator:", 0) == 0) {
      const auto kv = parse_kv_list(token.substr(10), "indicator");
      out.push_back(StepFunction::indicator(grid, kv_double(kv, "t", "indicator")));
    } else {
      throw std::invalid_argument(
          "bridge functional must be 'const' or 'indicator:t=<time>', got '" +
          token + "'");
    }
    start = semi + 1;
  }
  return out;
}

int cmd_bridge(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 1024, "bridge", false);
  const std::string method = config.get_string("method", "both");
  if (method != "orthogonal" && method != "canonical" && method != "both")
    throw std::invalid_argument(
        "bridge method must be 'orthogonal', 'canonical' or 'both'");
  const std::size_t paths = config.get_size("paths", 10000);
  const std::uint64_t seed = config.get_uint64("seed", 42);
  const std::string g_spec = config.get_string("g", "const");
  config.set("method", method);
  config.set("paths", std::to_string(paths));
  config.set("seed", std::to_string(seed));
  config.set("g", g_spec);

  const Factored f = factor_model(pm.model, grid, config);
  const std::vector<StepFunction> functionals = parse_functionals(g_spec, grid);
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w[j] = grid.weights[std::size_t(j)];

  // Exact conditioned second moments of a kernel's reconstruction, used as
  // the reference law when only one construction runs.
  const auto conditioned_law = [&w](const FredholmKernel& kernel,
                                    const BridgeSpec& spec) {
    const Eigen::MatrixXd recon =
        kernel.values * w.asDiagonal() * kernel.values.transpose();
    const Eigen::MatrixXd cross =
        kernel.values * w.asDiagonal() * spec.transferred;
    return Eigen::MatrixXd(
        recon - cross * spec.gram.ldlt().solve(cross.transpose()));
  };

  const std::vector<std::size_t> probes = probe_indices(grid.size());
  std::optional<PathEnsemble> orthogonal;
  std::optional<PathEnsemble> canonical;
  Eigen::MatrixXd reference_law;
  double annihilation_max = 0.0;
  std::vector<std::string> outputs;

  if (method == "orthogonal" || method == "both") {
    const BridgeSpec spec = bridge_gram(f.kernel, functionals);
    orthogonal = bridge_orthogonal(f.kernel, spec, simulate(f.kernel, paths, seed));
    if (method == "orthogonal") reference_law = conditioned_law(f.kernel, spec);
    // The projection must kill int g dX pathwise, not just in expectation.
    for (const StepFunction& g : functionals) {
      const auto& bp = g.breakpoints();
      const auto& vals = g.piece_values();
      for (Eigen::Index p = 0; p < orthogonal->paths.rows(); ++p) {
        double z = 0.0;
        for (std::size_t i = 0; i + 1 < bp.size(); ++i)
          z += vals[i] * (orthogonal->paths(p, Eigen::Index(bp[i + 1])) -
                          orthogonal->paths(p, Eigen::Index(bp[i])));
        annihilation_max = std::max(annihilation_max, std::abs(z));
      }
    }
    write_ensemble(head_paths(*orthogonal, 32), out, "bridge_orthogonal_paths");
    outputs.push_back("bridge_orthogonal_paths.csv");
    outputs.push_back("bridge_orthogonal_paths.json");
  }
  if (method == "canonical" || method == "both") {
    // The canonical construction rewrites the path causally and needs a
    // genuinely triangular kernel; only the two catalog models have one.
    FredholmKernel causal;
    if (pm.canonical == "bm")
      causal = known_kernel("brownian-motion-indicator", grid);
    else if (pm.canonical == "bb")
      causal = known_kernel("brownian-bridge-canonical-volterra", grid);
    else
      throw std::invalid_argument(
          "bridge method 'canonical' needs a causal kernel and supports "
          "models bm and bb; use --method orthogonal for this model");
    const BridgeSpec spec = bridge_gram(causal, functionals);
    canonical = bridge_canonical_ensemble(causal, spec, paths,
                                          seed ^ 0x9e3779b97f4a7c15ULL);
    if (method == "canonical") reference_law = conditioned_law(causal, spec);
    write_ensemble(head_paths(*canonical, 32), out, "bridge_canonical_paths");
    outputs.push_back("bridge_canonical_paths.csv");
    outputs.push_back("bridge_canonical_paths.json");
  }

  std::optional<CovarianceEstimate> est_a;
  std::optional<CovarianceEstimate> est_b;
  if (orthogonal) est_a = empirical_covariance(*orthogonal, probes);
  if (canonical) {
    auto est = empirical_covariance(*canonical, probes);
    (est_a ? est_b : est_a) = std::move(est);
  }

  const double z_gate = 3.5;
  const auto m = static_cast<Eigen::Index>(probes.size());
  const std::size_t n_pairs = std::size_t(m) * (std::size_t(m) + 1) / 2;
  Eigen::MatrixXd table(Eigen::Index(n_pairs), 8);
  Eigen::Index row = 0;
  double scale = 0.0;
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = a; b < m; ++b, ++row) {
      table(row, 0) = grid.nodes[probes[std::size_t(a)]];
      table(row, 1) = grid.nodes[probes[std::size_t(b)]];
      table(row, 2) = est_a->covariance(a, b);
      table(row, 3) = est_a->standard_error(a, b);
      if (est_b) {
        table(row, 4) = est_b->covariance(a, b);
        table(row, 5) = est_b->standard_error(a, b);
      } else {
        table(row, 4) = reference_law(Eigen::Index(probes[std::size_t(a)]),
                                      Eigen::Index(probes[std::size_t(b)]));
        table(row, 5) = 0.0;
      }
      scale = std::max({scale, std::abs(table(row, 2)), std::abs(table(row, 4))});
    }
  // A direction the conditioning pins has both sides at rounding level and a
  // near-zero standard error, so the z-statistic needs an absolute floor.
  const double atol = 1e-9 * (1.0 + scale);
  double worst_z = 0.0;
  for (row = 0; row < Eigen::Index(n_pairs); ++row) {
    const double diff = std::abs(table(row, 2) - table(row, 4));
    const double z =
        diff / (std::hypot(table(row, 3), table(row, 5)) + atol / z_gate);
    worst_z = std::max(worst_z, z);
    table(row, 6) = diff;
    table(row, 7) = z;
  }
  write_matrix_csv(out / "bridge_comparison.csv", table);
  outputs.push_back("bridge_comparison.csv");
  const bool pass = worst_z <= z_gate;

  json man = manifest_base("bridge", config);
  man["seed"] = seed;
  man["n_paths"] = paths;
  man["method"] = method;
  man["probe_times"] = json::array();
  for (std::size_t idx : probes) man["probe_times"].push_back(grid.nodes[idx]);
  man["comparison_columns"] =
      "t_a, t_b, cov_first, se_first, cov_second, se_second, abs_diff, z";
  man["comparison_reference"] =
      est_b ? "second sampled construction" : "exact conditioned covariance";
  if (orthogonal) {
    man["orthogonal"]["kernel_provenance"] = orthogonal->kernel_provenance;
    man["orthogonal"]["seed"] = orthogonal->seed;
    man["orthogonal"]["annihilation_max"] = annihilation_max;
  }
  if (canonical) {
    man["canonical"]["kernel_provenance"] = canonical->kernel_provenance;
    man["canonical"]["seed"] = canonical->seed;
  }
  man["residual"] = residual_json(f.residual);
  man["worst_z"] = worst_z;
  man["tolerances"]["z_gate"] = z_gate;
  man["tolerances"]["absolute_floor"] = atol;
  man["pass"] = pass;
  man["outputs"] = outputs;
  write_json(out / "bridge_manifest.json", man);
  return pass ? 0 : 3;
}

int cmd_langevin(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 256, "langevin", false);
  const double theta = config.get_double("theta", 1.0);
  const std::string scheme = config.get_string("scheme", "both");
  if (scheme != "exact" && scheme != "euler" && scheme != "both")
    throw std::invalid_argument(
        "langevin scheme must be 'exact', 'euler' or 'both'");
  const std::size_t paths = config.get_size("paths", 10000);
  const std::uint64_t seed = config.get_uint64("seed", 42);
  config.set("theta", format_double(theta));
  config.set("scheme", scheme);
  config.set("paths", std::to_string(paths));
  config.set("seed", std::to_string(seed));

  const Factored f = factor_model(pm.model, grid, config);
  const FredholmKernel response = langevin_kernel(f.kernel, theta);
  write_kernel(response, out, "langevin_kernel", f.residual.abs);
  std::vector<std::string> outputs = {"langevin_kernel.csv",
                                      "langevin_kernel.json"};

  double dt = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    dt = std::max(dt, grid.nodes[i + 1] - grid.nodes[i]);

  const std::vector<std::size_t> last = {grid.size() - 1};
  std::optional<CovarianceEstimate> exact_est;
  std::optional<CovarianceEstimate> euler_est;
  if (scheme == "exact" || scheme == "both") {
    const PathEnsemble ens = simulate(response, paths, seed);
    exact_est = empirical_covariance(ens, last);
    write_ensemble(head_paths(ens, 32), out, "langevin_exact_paths");
    outputs.push_back("langevin_exact_paths.csv");
    outputs.push_back("langevin_exact_paths.json");
  }
  if (scheme == "euler" || scheme == "both") {
    const PathEnsemble ens = langevin_simulate_euler(f.kernel, theta, paths, seed);
    euler_est = empirical_covariance(ens, last);
    write_ensemble(head_paths(ens, 32), out, "langevin_euler_paths");
    outputs.push_back("langevin_euler_paths.csv");
    outputs.push_back("langevin_euler_paths.json");
  }

  json man = manifest_base("langevin", config);
  man["seed"] = seed;
  man["n_paths"] = paths;
  man["theta"] = theta;
  man["dt"] = dt;
  man["kernel_sidecar_residual"] =
      "factorization residual of the driver kernel";
  if (exact_est) {
    man["exact"]["terminal_variance"] = exact_est->covariance(0, 0);
    man["exact"]["standard_error"] = exact_est->standard_error(0, 0);
  }
  if (euler_est) {
    man["euler"]["terminal_variance"] = euler_est->covariance(0, 0);
    man["euler"]["standard_error"] = euler_est->standard_error(0, 0);
  }
  if (pm.canonical == "bm")
    man["stationary_reference"] =
        (1.0 - std::exp(-2.0 * theta * pm.model.horizon())) / (2.0 * theta);

  bool pass = true;
  if (exact_est && euler_est) {
    const double diff = std::abs(exact_est->covariance(0, 0) -
                                 euler_est->covariance(0, 0));
    const double se = std::hypot(exact_est->standard_error(0, 0),
                                 euler_est->standard_error(0, 0));
    // Euler carries an O(dt) variance bias on top of sampling noise.
    const double gate = 3.5 * se + 2.0 * dt;
    pass = diff <= gate;
    man["scheme_gap"]["abs_diff"] = diff;
    man["scheme_gap"]["gate"] = gate;
    man["tolerances"]["z_gate"] = 3.5;
    man["tolerances"]["euler_bias_allowance"] = 2.0 * dt;
    Eigen::MatrixXd table(1, 5);
    table << pm.model.horizon(), exact_est->covariance(0, 0),
        exact_est->standard_error(0, 0), euler_est->covariance(0, 0),
        euler_est->standard_error(0, 0);
    write_matrix_csv(out / "langevin_variance.csv", table);
    outputs.push_back("langevin_variance.csv");
    man["variance_columns"] = "t, var_exact, se_exact, var_euler, se_euler";
  }
  man["pass"] = pass;
  man["outputs"] = outputs;
  write_json(out / "langevin_manifest.json", man);
  return pass ? 0 : 3;
}

FredholmKernel build_named_kernel(const std::string& name,
                                  const ParsedModel& pm, const TimeGrid& grid,
                                  RunConfig& config,
                                  std::optional<Factored>& factored,
                                  bool allow_derived) {
  const auto mercer = [&]() -> const FredholmKernel& {
    if (!factored) factored = factor_model(pm.model, grid, config);
    return factored->kernel;
  };
  if (name == "mercer") return mercer();
  if (name == "bm-indicator")
    return known_kernel("brownian-motion-indicator", grid);
  if (name == "bb-orthogonal")
    return known_kernel("brownian-bridge-orthogonal", grid);
  if (name == "bb-canonical")
    return known_kernel("brownian-bridge-canonical-volterra", grid);
  if (name == "degenerate-rank-one") {
    if (!pm.profile)
      throw std::invalid_argument(
          "kernel 'degenerate-rank-one' needs --model rank-one:f=..");
    return known_kernel("degenerate-rank-one", grid, pm.profile);
  }
  const bool is_langevin = name.rfind("langevin:", 0) == 0;
  const bool is_volterra = name.rfind("volterra-exp:", 0) == 0;
  if (is_langevin || is_volterra) {
    if (!allow_derived)
      throw std::invalid_argument(
          "kernel base must not itself be a derived kernel");
    const auto kv = parse_kv_list(name.substr(name.find(':') + 1), name);
    const double theta = kv_double(kv, "theta", name);
    const std::string base = kv.count("base") ? kv.at("base") : "mercer";
    const FredholmKernel base_kernel =
        build_named_kernel(base, pm, grid, config, factored, false);
    return is_langevin
               ? langevin_kernel(base_kernel, theta)
               : volterra_perturb(base_kernel, exponential_volterra(grid, theta));
  }
  throw std::invalid_argument(
      "unknown kernel '" + name +
      "' (grammar: mercer | bm-indicator | bb-orthogonal | bb-canonical | "
      "degenerate-rank-one | langevin:theta=..[,base=..] | "
      "volterra-exp:theta=..[,base=..])");
}

int cmd_equiv(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 256, "equiv", false);
  const std::string left = config.get_string("left", "mercer");
  const std::string right = config.get_string("right", "bm-indicator");
  config.set("left", left);
  config.set("right", right);
  double tol;
  if (config.has("tol")) {
    tol = config.get_double("tol", 0.0);
  } else {
    // Closed-form kernels reproduce the law up to one quadrature cell.
    tol = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
      tol = std::max(tol, grid.nodes[i + 1] - grid.nodes[i]);
  }
  config.set("tol", format_double(tol));

  std::optional<Factored> factored;
  const FredholmKernel a =
      build_named_kernel(left, pm, grid, config, factored, true);
  const FredholmKernel b =
      build_named_kernel(right, pm, grid, config, factored, true);
  const EquivalenceReport report = unitary_equivalence_check(a, b, tol);
  write_kernel(a, out, "equiv_left", factorization_residual(a, pm.model).abs);
  write_kernel(b, out, "equiv_right", factorization_residual(b, pm.model).abs);

  json man = manifest_base("equiv", config);
  man["left"] = left;
  man["right"] = right;
  man["max_abs_diff"] = report.max_abs_diff;
  man["tolerances"]["max_abs_diff"] = tol;
  man["kernel_sidecar_residual"] =
      "defect of each kernel as a factorization of the configured model";
  man["pass"] = report.pass;
  man["outputs"] = json::array({"equiv_left.csv", "equiv_left.json",
                                "equiv_right.csv", "equiv_right.json"});
  write_json(out / "equiv_manifest.json", man);
  return report.pass ? 0 : 3;
}

int cmd_kl(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 256, "kl", false);
  const std::string basis = config.get_string("basis", "mercer-eigen");
  const std::size_t m = config.get_size("m", 10);
  config.set("basis", basis);
  config.set("m", std::to_string(m));

  const Factored f = factor_model(pm.model, grid, config);
  const SeriesExpansion expansion = series_expand(f.kernel, basis, m);
  write_matrix_csv(out / "kl_functions.csv", expansion.functions);

  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd truncation(n, 2);
  double integrated = 0.0;
  double max_err = -std::numeric_limits<double>::infinity();
  double min_err = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = grid.nodes[std::size_t(i)];
    const double err =
        pm.model(t, t) - expansion.functions.row(i).squaredNorm();
    truncation(i, 0) = t;
    truncation(i, 1) = err;
    integrated += grid.weights[std::size_t(i)] * err;
    max_err = std::max(max_err, err);
    min_err = std::min(min_err, err);
  }
  write_matrix_csv(out / "kl_truncation.csv", truncation);

  json man = manifest_base("kl", config);
  man["basis"] = expansion.basis;
  man["m"] = m;
  man["integrated_truncation_error"] = integrated;
  man["max_pointwise_error"] = max_err;
  man["min_pointwise_error"] = min_err;
  man["residual"] = residual_json(f.residual);
  man["truncation_columns"] = "t, R(t,t) - sum_j a_j(t)^2";
  man["outputs"] =
      json::array({"kl_functions.csv", "kl_truncation.csv"});
  write_json(out / "kl_manifest.json", man);
  return 0;
}

int cmd_ito_check(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 128, "ito-check", false);
  const std::string f_name = config.get_string("f", "x2");
  const std::map<std::string, unsigned> f_table = {
      {"x2", 2}, {"x3", 3}, {"x4", 4}};
  if (!f_table.count(f_name))
    throw std::invalid_argument("f must be one of x2, x3, x4");
  const double lambda = config.get_double("lambda", 0.1);
  const double t = config.get_double("t", pm.model.horizon() / 2.0);
  const std::string g_name = config.get_string("G", "xT2");
  const std::map<std::string, unsigned> g_table = {
      {"xT", 1}, {"xT2", 2}, {"xT3", 3}};
  if (!g_table.count(g_name))
    throw std::invalid_argument("G must be one of xT, xT2, xT3");
  const double anchor = config.get_double("anchor", pm.model.horizon());
  const std::size_t paths = config.get_size("paths", 10000);
  const std::uint64_t seed = config.get_uint64("seed", 42);
  config.set("f", f_name);
  config.set("lambda", format_double(lambda));
  config.set("t", format_double(t));
  config.set("G", g_name);
  config.set("anchor", format_double(anchor));
  config.set("paths", std::to_string(paths));
  config.set("seed", std::to_string(seed));

  const Factored fact = factor_model(pm.model, grid, config);
  const ScalarFunction f = monomial(f_table.at(f_name), lambda);
  const GrowthReport growth = growth_check(f, pm.model, grid, 601);
  if (!growth.pass)
    throw DegenerateModel(
        "growth envelope rejected for f=" + f_name + ": component '" +
        growth.violated_component + "' escapes c*exp(lambda x^2)");
  const TestVariable G =
      TestVariable::monomial({anchor}, {g_table.at(g_name)});
  const DualityReport report =
      ito_duality_check(pm.model, fact.kernel, f, t, G, paths, seed);

  const double diff = std::abs(report.lhs_mean - report.rhs_mean);
  const double se = std::hypot(report.lhs_se, report.rhs_se);
  Eigen::MatrixXd table(1, 6);
  table << report.lhs_mean, report.rhs_mean, report.lhs_se, report.rhs_se,
      diff, safe_z(diff, se);
  write_matrix_csv(out / "ito_check_stats.csv", table);

  json man = manifest_base("ito-check", config);
  man["seed"] = seed;
  man["n_paths"] = report.n_paths;
  man["growth"]["lambda_bound"] = growth.lambda_bound;
  man["growth"]["lambda_admissible"] = growth.lambda_admissible;
  man["lhs_mean"] = report.lhs_mean;
  man["rhs_mean"] = report.rhs_mean;
  man["lhs_se"] = report.lhs_se;
  man["rhs_se"] = report.rhs_se;
  man["stats_columns"] = "lhs_mean, rhs_mean, lhs_se, rhs_se, abs_diff, z";
  man["tolerances"]["z_gate"] = 3.5;
  man["pass"] = report.pass;
  man["outputs"] = json::array({"ito_check_stats.csv"});
  write_json(out / "ito_check_manifest.json", man);
  return report.pass ? 0 : 3;
}

int cmd_chaos_check(RunConfig config, const fs::path& out) {
  auto [pm, grid] = resolve_model_and_grid(config, 128, "chaos-check", false);
  const std::size_t p = config.get_size("p", 2);
  const std::size_t q = config.get_size("q", 2);
  const std::size_t draws = config.get_size("draws", 1000);
  const std::uint64_t seed = config.get_uint64("seed", 42);
  const std::string geometry = config.get_string("geometry", "oblique");
  const double tol = config.get_double("tol", 1e-10);
  config.set("p", std::to_string(p));
  config.set("q", std::to_string(q));
  config.set("draws", std::to_string(draws));
  config.set("seed", std::to_string(seed));
  config.set("geometry", geometry);
  config.set("tol", format_double(tol));

  const Factored fact = factor_model(pm.model, grid, config);
  const double T = pm.model.horizon();
  // Breakpoints at T/2 and 3T/4 must land on nodes, so grid.n needs to be a
  // multiple of 4 (the default 128 is).
  StepFunction f = StepFunction::constant(grid, 0.0);
  StepFunction g = f;
  if (geometry == "aligned") {
    f = StepFunction::indicator(grid, 0.75 * T);
    g = StepFunction::from_pieces(grid, {0.0, 0.75 * T, T}, {0.5, 0.0});
  } else if (geometry == "orthogonal") {
    f = StepFunction::indicator(grid, 0.5 * T);
    g = StepFunction::from_pieces(grid, {0.0, 0.5 * T, T}, {0.0, 1.0});
  } else if (geometry == "oblique") {
    f = StepFunction::indicator(grid, 0.75 * T);
    g = StepFunction::from_pieces(grid, {0.0, 0.5 * T, T}, {1.0, 2.0});
  } else {
    throw std::invalid_argument(
        "geometry must be 'aligned', 'orthogonal' or 'oblique'");
  }
  if (p > 6 || q > 6)
    throw UnsupportedOrder("chaos-check: order above 6 is not supported");
  const ProductFormulaReport report = product_formula_check(
      fact.kernel, f, g, unsigned(p), unsigned(q), draws, seed);
  const bool pass = report.max_abs_deviation <= tol;

  Eigen::MatrixXd table(1, 2);
  table << report.max_abs_deviation, double(report.n_draws);
  write_matrix_csv(out / "chaos_check.csv", table);

  json man = manifest_base("chaos-check", config);
  man["seed"] = seed;
  man["p"] = p;
  man["q"] = q;
  man["geometry"] = geometry;
  man["n_draws"] = report.n_draws;
  man["pairing"] = ht_inner(fact.kernel, f, g);
  man["max_abs_deviation"] = report.max_abs_deviation;
  man["tolerances"]["max_abs_deviation"] = tol;
  man["pass"] = pass;
  man["outputs"] = json::array({"chaos_check.csv"});
  write_json(out / "chaos_check_manifest.json", man);
  return pass ? 0 : 3;
}

// ---------------------------------------------------------------------------
// wiring

struct Binding {
  std::string key;
  CLI::Option* option = nullptr;
  std::string* store = nullptr;
};

// One subcommand: config file merged first, then any flag given on the
// command line overrides the file entry for its key.
class SubCommand {
 public:
  SubCommand(CLI::App& parent, const std::string& name,
             const std::string& description)
      : app_(parent.add_subcommand(name, description)) {
    app_->add_option("--config", config_file_,
                     "key=value config file; explicit flags override it");
    app_->add_option("--out", out_flag_,
                     "output directory (default: $FREDHOLM_OUT or '.')");
  }

  CLI::Option* option(const std::string& flag, const std::string& key,
                      const std::string& description) {
    store_.emplace_back();
    Binding binding{key, nullptr, &store_.back()};
    binding.option = app_->add_option(flag, store_.back(), description);
    bindings_.push_back(binding);
    return binding.option;
  }

  bool parsed() const { return app_->parsed(); }

  RunConfig config() const {
    RunConfig c;
    if (!config_file_.empty()) c = RunConfig::load(config_file_);
    for (const Binding& b : bindings_)
      if (b.option->count() > 0) c.set(b.key, *b.store);
    return c;
  }

  fs::path out_dir() const { return resolve_out_dir(out_flag_); }

  CLI::App* app() { return app_; }

 private:
  CLI::App* app_;
  std::string config_file_;
  std::string out_flag_;
  std::deque<std::string> store_;  // stable addresses for CLI11 bindings
  std::vector<Binding> bindings_;
};

void add_model_options(SubCommand& sub, std::size_t default_n) {
  sub.option("--model", "model",
             "model spec: bm | bb | fbm:H=.. | ou[:theta=..,sigma=..] | "
             "rank-one:f=.. | series:rank=.. | tabulated:file=..[,bv=true]");
  sub.option("--T", "T", "time horizon (default 1; tabulated input wins)");
  sub.option("--n", "grid.n",
             "grid size (default " + std::to_string(default_n) +
                 "): subintervals for trapezoid, nodes for gauss-legendre");
  sub.option("--rule", "grid.rule",
             "quadrature rule: trapezoid (default) or gauss-legendre");
  sub.option("--trace-fraction", "trace-fraction",
             "spectral mass the factorization must capture (default 1-1e-10)");
  sub.option("--clip", "clip",
             "relative eigenvalue clip for the factorization (default 1e-12)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fredholm: factorize Gaussian covariances into square-root kernels and "
      "exercise the constructions built on them"};
  app.require_subcommand(0, 1);

  SubCommand factorize(app, "factorize",
                       "factor a covariance into a square-root kernel");
  add_model_options(factorize, 256);

  SubCommand simulate_cmd(app, "simulate",
                          "draw sample paths from a factored covariance");
  add_model_options(simulate_cmd, 256);
  simulate_cmd.option("--paths", "paths", "number of paths (default 1000)");
  simulate_cmd.option("--seed", "seed", "random seed (default 42)");

  SubCommand bridge(app, "bridge",
                    "condition a process on integral functionals");
  add_model_options(bridge, 1024);
  bridge.option("--method", "method",
                "orthogonal, canonical or both (default both)");
  bridge.option("--paths", "paths", "paths per method (default 10000)");
  bridge.option("--seed", "seed", "random seed (default 42)");
  std::vector<std::string> g_values;
  bridge.app()->add_option(
      "--g", g_values,
      "bridge functional, repeatable: const | indicator:t=<time> (default "
      "const)");

  SubCommand langevin(app, "langevin",
                      "drive a linear-response equation with the process");
  add_model_options(langevin, 256);
  langevin.option("--theta", "theta", "mean-reversion rate (default 1)");
  langevin.option("--scheme", "scheme",
                  "exact, euler or both (default both)");
  langevin.option("--paths", "paths", "number of paths (default 10000)");
  langevin.option("--seed", "seed", "random seed (default 42)");

  SubCommand equiv(app, "equiv",
                   "compare the process laws induced by two kernels");
  add_model_options(equiv, 256);
  equiv.option("--left", "left", "first kernel (default mercer)");
  equiv.option("--right", "right", "second kernel (default bm-indicator)");
  equiv.option("--tol", "tol",
               "entrywise tolerance on the reconstructed covariances "
               "(default: largest grid cell)");

  SubCommand kl(app, "kl", "expand the process in an orthonormal series");
  add_model_options(kl, 256);
  kl.option("--basis", "basis",
            "mercer-eigen (default), trigonometric or haar");
  kl.option("--m", "m", "number of series terms (default 10)");

  SubCommand ito_check(app, "ito-check",
                       "Monte Carlo check of the change-of-variable duality");
  add_model_options(ito_check, 128);
  ito_check.option("--f", "f", "test function: x2 (default), x3 or x4");
  ito_check.option("--lambda", "lambda",
                   "growth envelope rate for f (default 0.1)");
  ito_check.option("--t", "t", "evaluation time (default T/2)");
  ito_check.option("--G", "G",
                   "smooth test variable: xT, xT2 (default) or xT3");
  ito_check.option("--anchor", "anchor",
                   "anchor time for the test variable (default T)");
  ito_check.option("--paths", "paths", "number of paths (default 10000)");
  ito_check.option("--seed", "seed", "random seed (default 42)");

  SubCommand chaos_check(app, "chaos-check",
                         "per-draw check of the product formula for "
                         "multiple integrals");
  add_model_options(chaos_check, 128);
  chaos_check.option("--p", "p", "order of the first integral (default 2)");
  chaos_check.option("--q", "q", "order of the second integral (default 2)");
  chaos_check.option("--draws", "draws",
                     "number of Gaussian draws (default 1000)");
  chaos_check.option("--seed", "seed", "random seed (default 42)");
  chaos_check.option("--geometry", "geometry",
                     "aligned, orthogonal or oblique (default); needs n "
                     "divisible by 4");
  chaos_check.option("--tol", "tol",
                     "per-draw deviation tolerance (default 1e-10)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  // Accepted so runs can pin it, but it never influences results: all
  // reductions are fixed-order and Eigen products are sequential here.
  if (const char* threads = std::getenv("FREDHOLM_THREADS")) {
    char* end = nullptr;
    const long count = std::strtol(threads, &end, 10);
    if (end && *end == '\0' && count >= 1 && count <= 1024)
      Eigen::setNbThreads(int(count));
  }

  try {
    if (factorize.parsed())
      return cmd_factorize(factorize.config(), factorize.out_dir());
    if (simulate_cmd.parsed())
      return cmd_simulate(simulate_cmd.config(), simulate_cmd.out_dir());
    if (bridge.parsed()) {
      RunConfig config = bridge.config();
      if (!g_values.empty()) {
        std::string joined;
        for (const std::string& g : g_values) {
          if (!joined.empty()) joined += ';';
          joined += g;
        }
        config.set("g", joined);
      }
      return cmd_bridge(std::move(config), bridge.out_dir());
    }
    if (langevin.parsed())
      return cmd_langevin(langevin.config(), langevin.out_dir());
    if (equiv.parsed()) return cmd_equiv(equiv.config(), equiv.out_dir());
    if (kl.parsed()) return cmd_kl(kl.config(), kl.out_dir());
    if (ito_check.parsed())
      return cmd_ito_check(ito_check.config(), ito_check.out_dir());
    if (chaos_check.parsed())
      return cmd_chaos_check(chaos_check.config(), chaos_check.out_dir());
    std::cerr << "fredholm: no subcommand given (try 'fredholm --help')\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "fredholm: " << e.message << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fredholm: " << e.what() << '\n';
    return 2;
  }
}
