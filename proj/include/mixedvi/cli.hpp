#ifndef MIXEDVI_CLI_HPP
#define MIXEDVI_CLI_HPP

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixedvi/analysis.hpp"
#include "mixedvi/config.hpp"
#include "mixedvi/io.hpp"
#include "mixedvi/solver.hpp"

namespace mixedvi::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kNonConvergence = 2,
  kVerificationFailed = 3,
};

inline std::string_view outcome_name(int code) {
  switch (code) {
    case kOk: return "ok";
    case kConfigError: return "config_error";
    case kNonConvergence: return "non_convergence";
    case kVerificationFailed: return "verification_failed";
  }
  return "?";
}

struct RunOptions {
  std::optional<std::string> out_dir;  // overrides output.directory
  std::optional<std::uint64_t> seed;   // overrides solver.seed
  bool quiet = false;
};

/// Tolerances of the solution checks asserted by `verify`.
inline constexpr double kFeasibilityTol = 1e-10;
inline constexpr double kComplementarityTol = 1e-6;

namespace detail {

/// Artifacts collected in memory and written once the task has finished.
struct Artifacts {
  std::vector<std::pair<std::string, std::string>> csv;
  std::vector<std::pair<std::string, std::string>> json;
};

inline nlohmann::json config_json(const RunConfig& c) {
  const auto& p = c.mesh.partition;
  nlohmann::json solver{{"eps", c.solver.eps},
                        {"newton_tol", c.solver.newton_tol},
                        {"uzawa_tol", c.solver.uzawa_tol},
                        {"max_newton", c.solver.max_newton},
                        {"max_uzawa", c.solver.max_uzawa},
                        {"seed", c.solver.seed},
                        {"variant", to_string(c.solver.variant)}};
  solver["rho"] = c.solver.rho ? nlohmann::json(*c.solver.rho) : nlohmann::json(nullptr);
  return {{"mesh",
           {{"nx", c.mesh.nx},
            {"ny", c.mesh.ny},
            {"width", c.mesh.width},
            {"height", c.mesh.height},
            {"partition",
             {{"left", to_string(p.left)},
              {"right", to_string(p.right)},
              {"bottom", to_string(p.bottom)},
              {"top", to_string(p.top)}}}}},
          {"problem", io::to_json(c.problem)},
          {"solver", solver}};
}

inline void add_solution(Artifacts& a, const Mesh& mesh, const DiscreteState& s) {
  a.csv.emplace_back("u.csv", io::u_csv(mesh, s.u));
  a.csv.emplace_back("lambda.csv", io::lambda_csv(mesh, s.lam));
}

inline int solve_code(const SolveDiagnostics& d) { return d.converged ? kOk : kNonConvergence; }

/// |lam_e| <= theta and <lam, gamma u> >= theta ||gamma u||_{L1(G3)}.
inline nlohmann::json solution_checks(const Mesh& mesh, const ProblemSpec& spec, const DiscreteState& s, bool& ok) {
  const auto ops = assemble_operators(mesh, spec);
  const double max_lam = s.lam.size() ? s.lam.lpNorm<Eigen::Infinity>() : 0.0;
  const bool feasible = max_lam <= spec.theta + kFeasibilityTol;
  const double pairing = s.lam.dot(ops.coupling * s.u);
  const double l1 = trace_lp_norm(mesh, Tag::G3, s.u, 1.0);
  const bool complementary = pairing >= spec.theta * l1 - kComplementarityTol * std::max(1.0, l1);
  ok = feasible && complementary;
  return {{"feasibility", {{"max_abs_lambda", max_lam}, {"theta", spec.theta}, {"ok", feasible}}},
          {"complementarity",
           {{"pairing", pairing}, {"theta_l1_trace", spec.theta * l1}, {"ok", complementary}}}};
}

inline int run_solve(const RunConfig& c, const Mesh& mesh, nlohmann::json& d, Artifacts& a) {
  std::optional<DiscreteState> start;
  if (c.solver.seed != 0) start = random_state(mesh, c.problem, c.solver.seed);
  const auto res = uzawa_solve(mesh, c.problem, c.solver, start);
  d["start"] = start ? "random" : "default";
  d["solve"] = io::to_json(res.diagnostics);
  d["x_norm_u"] = x_norm(mesh, res.state.u, c.problem.r);
  d["y_norm_lambda"] = y_norm(mesh, res.state.lam, c.problem.r);
  add_solution(a, mesh, res.state);
  return solve_code(res.diagnostics);
}

inline int run_oracle(const RunConfig& c, const Mesh& mesh, nlohmann::json& d, Artifacts& a) {
  const auto oracle = oracle_minimize(mesh, c.problem, c.solver);
  const auto uzawa = uzawa_solve(mesh, c.problem, c.solver);
  const double scale = std::max(1.0, x_norm(mesh, uzawa.state.u, c.problem.r));
  const double gap = x_norm(mesh, oracle.state.u - uzawa.state.u, c.problem.r);
  const bool agree = gap <= c.oracle.tolerance * scale;
  d["oracle"] = io::to_json(oracle.diagnostics);
  d["uzawa"] = io::to_json(uzawa.diagnostics);
  d["x_gap"] = gap;
  d["tolerance"] = c.oracle.tolerance * scale;
  d["agree"] = agree;
  add_solution(a, mesh, oracle.state);
  if (!oracle.diagnostics.converged || !uzawa.diagnostics.converged) return kNonConvergence;
  return agree ? kOk : kVerificationFailed;
}

inline int run_verify(const RunConfig& c, const Mesh& mesh, nlohmann::json& d, Artifacts& a) {
  const auto res = uzawa_solve(mesh, c.problem, c.solver);
  d["solve"] = io::to_json(res.diagnostics);
  add_solution(a, mesh, res.state);
  if (!res.diagnostics.converged) return kNonConvergence;

  ConstantsOptions opt = c.verify.constants;
  opt.seed = c.solver.seed;
  const auto report = compute_constants(mesh, c.problem, opt, c.solver);
  const auto bounds = verify_bounds(mesh, c.problem, res.state, report);
  bool checks_ok = false;
  d["checks"] = solution_checks(mesh, c.problem, res.state, checks_ok);
  d["bounds"] = io::to_json(bounds);
  d["constants"] = io::to_json(report);
  a.json.emplace_back("constants.json", io::json_text(io::to_json(report)));
  return bounds.passed() && checks_ok ? kOk : kVerificationFailed;
}

inline bool strictly_decreasing_x_gap(const ConvergenceTable& t) {
  for (std::size_t k = 1; k < t.rows.size(); ++k)
    if (!(t.rows[k].x_gap < t.rows[k - 1].x_gap)) return false;
  return true;
}

inline int run_converge(const RunConfig& c, const Mesh& mesh, nlohmann::json& d, Artifacts& a) {
  const auto table = convergence_study(mesh, c.problem, c.converge.schedule, c.converge.levels, c.solver);
  const auto& s = c.converge.schedule;
  nlohmann::json sched{{"f_amp", {s.f_amp[0], s.f_amp[1]}},
                       {"theta_amp", s.theta_amp},
                       {"g_amp", s.g_amp},
                       {"power", s.power}};
  if (s.f_fixed) sched["f_fixed"] = {(*s.f_fixed)[0], (*s.f_fixed)[1]};
  if (s.theta_fixed) sched["theta_fixed"] = *s.theta_fixed;
  if (s.g_fixed) sched["g_fixed"] = *s.g_fixed;
  d["schedule"] = sched;
  d["levels"] = c.converge.levels;
  d["limit_solve"] = io::to_json(table.limit_diagnostics);
  d["rows"] = table.rows.size();
  d["all_converged"] = table.all_converged();
  d["monotone_trend"] = table.monotone_trend();
  d["strictly_decreasing_x_gap"] = strictly_decreasing_x_gap(table);
  a.csv.emplace_back("table.csv", io::table_csv(table));
  add_solution(a, mesh, table.limit_state);
  if (!table.all_converged()) return kNonConvergence;
  return table.monotone_trend() ? kOk : kVerificationFailed;
}

inline int run_optimize(const RunConfig& c, const Mesh& mesh, nlohmann::json& d, Artifacts& a) {
  const auto& o = c.optimize;
  CostSpec cost = o.cost;
  if (o.target == TargetKind::Self) cost = self_target(mesh, c.problem, cost, o.target_p, c.solver);
  OptimizerOptions opt = o.options;
  opt.seed = c.solver.seed;
  const auto result = optimize(mesh, c.problem, cost, o.box, opt, c.solver);
  const int n = parameter_count(cost.kind);

  nlohmann::json pstar = nlohmann::json::array();
  for (double p : result.p_star) pstar.push_back(p);
  d["cost"] = to_string(cost.kind);
  d["target"] = o.target == TargetKind::Self ? "self" : "zero";
  if (o.target == TargetKind::Self) d["target_p"] = o.target_p;
  d["box"] = {{"lower", o.box.lower}, {"upper", o.box.upper}};
  d["p_star"] = pstar;
  d["cost_star"] = io::json_double(result.cost_star);
  d["evaluations"] = result.evaluations;
  a.csv.emplace_back("trace.csv", io::trace_csv(result, n));
  if (!std::isfinite(result.cost_star)) return kNonConvergence;

  const auto best = uzawa_solve(mesh, apply_parameters(c.problem, cost.kind, result.p_star), c.solver);
  d["solve_at_p_star"] = io::to_json(best.diagnostics);
  add_solution(a, mesh, best.state);
  return solve_code(best.diagnostics);
}

}  // namespace detail

/// Runs the configured task, writes its artifacts and returns the exit code.
/// Every artifact depends only on the config and the seed.
inline int execute(RunConfig config, const RunOptions& opts, std::ostream& log) {
  if (opts.seed) config.solver.seed = *opts.seed;
  const std::filesystem::path dir = opts.out_dir.value_or(config.output.directory);
  const Mesh mesh = config.mesh.build();

  nlohmann::json d{{"schema_version", io::kSchemaVersion}, {"task", to_string(config.task)}};
  d["config"] = detail::config_json(config);
  detail::Artifacts a;
  int code = kOk;
  switch (config.task) {
    case TaskKind::Solve: code = detail::run_solve(config, mesh, d, a); break;
    case TaskKind::Oracle: code = detail::run_oracle(config, mesh, d, a); break;
    case TaskKind::Verify: code = detail::run_verify(config, mesh, d, a); break;
    case TaskKind::Converge: code = detail::run_converge(config, mesh, d, a); break;
    case TaskKind::Optimize: code = detail::run_optimize(config, mesh, d, a); break;
  }
  d["exit_code"] = code;
  d["outcome"] = outcome_name(code);
  a.json.emplace_back("diagnostics.json", io::json_text(d));
  if (config.output.mesh) a.json.emplace_back("mesh.json", io::json_text(mesh_to_json(mesh)));

  std::vector<std::string> written;
  if (config.output.csv)
    for (const auto& [name, text] : a.csv) io::write_file(dir / name, text), written.push_back(name);
  if (config.output.json)
    for (const auto& [name, text] : a.json) io::write_file(dir / name, text), written.push_back(name);

  if (!opts.quiet) {
    log << to_string(config.task) << ": " << outcome_name(code) << " (exit " << code << "), wrote";
    for (const auto& w : written) log << ' ' << (dir / w).string();
    log << '\n';
  }
  return code;
}

inline void print_violations(const std::vector<Violation>& v, std::ostream& os) {
  for (const auto& e : v) os << e.field << ": " << e.message << '\n';
}

/// Loads `path` and runs it. A named task must match the config's task.kind;
/// std::nullopt runs whatever the config declares.
inline int run_file(const std::filesystem::path& path, std::optional<TaskKind> command, const RunOptions& opts,
                    std::ostream& out, std::ostream& err) {
  ConfigResult parsed;
  try {
    parsed = load_config(path);
  } catch (const ConfigReadError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }
  if (!parsed.config) {
    print_violations(parsed.violations, err);
    return kConfigError;
  }
  if (command && *command != parsed.config->task) {
    err << "task.kind: config declares '" << to_string(parsed.config->task) << "' but the command is '"
        << to_string(*command) << "'\n";
    return kConfigError;
  }
  try {
    return execute(*parsed.config, opts, out);
  } catch (const std::invalid_argument& e) {
    err << e.what() << '\n';
    return kConfigError;
  } catch (const std::runtime_error& e) {
    err << e.what() << '\n';
    return kNonConvergence;
  }
}

/// Prints every violation; exit 0 iff the config is valid.
inline int validate_file(const std::filesystem::path& path, std::ostream& out, std::ostream& err) {
  try {
    const auto parsed = load_config(path);
    print_violations(parsed.violations, out);
    return parsed.config ? kOk : kConfigError;
  } catch (const ConfigReadError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace mixedvi::cli

#endif  // MIXEDVI_CLI_HPP
