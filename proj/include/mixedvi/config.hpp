#ifndef MIXEDVI_CONFIG_HPP
#define MIXEDVI_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <toml.hpp>

#include "mixedvi/analysis.hpp"
#include "mixedvi/mesh.hpp"
#include "mixedvi/problem.hpp"
#include "mixedvi/solver.hpp"

namespace mixedvi {

enum class TaskKind { Solve, Oracle, Verify, Converge, Optimize };

inline constexpr std::array<TaskKind, 5> kAllTasks{TaskKind::Solve, TaskKind::Oracle, TaskKind::Verify,
                                                   TaskKind::Converge, TaskKind::Optimize};

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Solve: return "solve";
    case TaskKind::Oracle: return "oracle";
    case TaskKind::Verify: return "verify";
    case TaskKind::Converge: return "converge";
    case TaskKind::Optimize: return "optimize";
  }
  return "?";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (TaskKind k : kAllTasks)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct MeshConfig {
  int nx = 8;
  int ny = 8;
  double width = 1.0;
  double height = 1.0;
  BoundaryPartition partition;

  Mesh build() const { return build_rect_mesh(nx, ny, width, height, partition); }
};

struct OracleTask {
  double tolerance = 1e-4;  // relative x_norm gap between oracle and Uzawa
};

struct VerifyTask {
  ConstantsOptions constants;
};

struct ConvergeTask {
  PerturbationSchedule schedule;
  std::vector<int> levels;
};

enum class TargetKind { Zero, Self };

struct OptimizeTask {
  CostSpec cost;  // targets filled at run time
  TargetKind target = TargetKind::Zero;
  std::vector<double> target_p;  // reference parameters for TargetKind::Self
  ParameterBox box;
  OptimizerOptions options;
};

struct OutputConfig {
  std::string directory = "mixedvi_out";
  bool csv = true;
  bool json = true;
  bool mesh = false;  // mesh.json debug export
};

struct RunConfig {
  MeshConfig mesh;
  ProblemSpec problem;
  SolverConfig solver;
  TaskKind task = TaskKind::Solve;
  OracleTask oracle;
  VerifyTask verify;
  ConvergeTask converge;
  OptimizeTask optimize;
  OutputConfig output;
};

struct ConfigResult {
  std::optional<RunConfig> config;  // set iff violations is empty
  std::vector<Violation> violations;
};

namespace detail {

/// Typed access to one TOML table that records every key it reads, so the
/// keys never read can be reported as unknown.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string prefix, std::vector<Violation>& out)
      : table_(table), prefix_(std::move(prefix)), out_(out) {}

  bool has(std::string_view key) {
    seen_.emplace(key);
    return table_ && table_->contains(key);
  }

  std::optional<double> number(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (auto v = n->value<double>(); v && (n->is_floating_point() || n->is_integer())) return *v;
    type_error(key, "a number");
    return std::nullopt;
  }

  std::optional<std::int64_t> integer(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (n->is_integer()) return n->as_integer()->get();
    type_error(key, "an integer");
    return std::nullopt;
  }

  std::optional<bool> boolean(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (n->is_boolean()) return n->as_boolean()->get();
    type_error(key, "a boolean");
    return std::nullopt;
  }

  std::optional<std::string> string(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (n->is_string()) return n->as_string()->get();
    type_error(key, "a string");
    return std::nullopt;
  }

  std::optional<std::vector<double>> numbers(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    std::vector<double> out;
    if (const auto* arr = n->as_array()) {
      for (const auto& e : *arr) {
        if (!(e.is_floating_point() || e.is_integer())) break;
        out.push_back(*e.value<double>());
      }
      if (out.size() == arr->size()) return out;
    }
    type_error(key, "an array of numbers");
    return std::nullopt;
  }

  std::optional<std::vector<std::int64_t>> integers(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    std::vector<std::int64_t> out;
    if (const auto* arr = n->as_array()) {
      for (const auto& e : *arr) {
        if (!e.is_integer()) break;
        out.push_back(e.as_integer()->get());
      }
      if (out.size() == arr->size()) return out;
    }
    type_error(key, "an array of integers");
    return std::nullopt;
  }

  std::optional<std::vector<std::string>> strings(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    std::vector<std::string> out;
    if (const auto* arr = n->as_array()) {
      for (const auto& e : *arr) {
        if (!e.is_string()) break;
        out.push_back(e.as_string()->get());
      }
      if (out.size() == arr->size()) return out;
    }
    type_error(key, "an array of strings");
    return std::nullopt;
  }

  /// Nested table; a present non-table value is a type error.
  const toml::table* table(std::string_view key) {
    const toml::node* n = get(key);
    if (!n) return nullptr;
    if (const auto* t = n->as_table()) return t;
    type_error(key, "a table");
    return nullptr;
  }

  void require(std::string_view key) {
    if (!has(key)) out_.push_back({field(key), "required key is missing"});
  }

  void error(std::string_view key, std::string message) { out_.push_back({field(key), std::move(message)}); }

  /// Reports keys of the table that were never read.
  void finish(std::string_view context = {}) {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!seen_.count(key)) {
        std::string msg = "unknown key";
        if (!context.empty()) msg += " (" + std::string(context) + ")";
        out_.push_back({field(key), msg});
      }
    }
  }

  std::vector<Violation>& violations() { return out_; }

  std::string field(std::string_view key) const { return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key); }

 private:
  const toml::node* get(std::string_view key) {
    seen_.emplace(key);
    return table_ ? table_->get(key) : nullptr;
  }

  void type_error(std::string_view key, const char* expected) {
    out_.push_back({field(key), std::string("expected ") + expected});
  }

  const toml::table* table_;
  std::string prefix_;
  std::vector<Violation>& out_;
  std::set<std::string, std::less<>> seen_;
};

template <class T>
void assign(std::optional<T> v, T& dst) {
  if (v) dst = *v;
}

inline void read_int(TableReader& t, std::string_view key, int& dst) {
  if (auto v = t.integer(key)) {
    if (*v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max())
      t.error(key, "integer out of range");
    else
      dst = static_cast<int>(*v);
  }
}

inline void read_pair(TableReader& t, std::string_view key, TractionCoeffs& dst) {
  if (auto v = t.numbers(key)) {
    if (v->size() != 2)
      t.error(key, "exactly 2 coefficients required (f = c0 + c1 s)");
    else
      dst = {(*v)[0], (*v)[1]};
  }
}

inline void parse_mesh(TableReader& t, MeshConfig& m) {
  t.require("nx");
  t.require("ny");
  read_int(t, "nx", m.nx);
  read_int(t, "ny", m.ny);
  assign(t.number("width"), m.width);
  assign(t.number("height"), m.height);
  if (m.nx < 1) t.error("nx", "nx >= 1 required");
  if (m.ny < 1) t.error("ny", "ny >= 1 required");
  if (!(m.width > 0.0) || !std::isfinite(m.width)) t.error("width", "width > 0 required");
  if (!(m.height > 0.0) || !std::isfinite(m.height)) t.error("height", "height > 0 required");

  if (!t.has("partition")) return;
  const toml::table* pt = t.table("partition");
  if (!pt) return;
  const std::size_t before = t.violations().size();
  TableReader p(pt, t.field("partition"), t.violations());
  std::array<std::optional<Tag>, 4> tags;
  for (Side s : kAllSides) {
    const std::string_view key = to_string(s);
    if (!p.has(key)) {
      p.error(key, "every side needs a tag (G1, G2, G3 or G4)");
      continue;
    }
    if (auto name = p.string(key)) {
      if (auto tag = parse_tag(*name))
        tags[static_cast<int>(s)] = *tag;
      else
        p.error(key, "unknown tag '" + *name + "' (expected G1, G2, G3 or G4)");
    }
  }
  p.finish();
  for (Tag tag : kAllTags) {
    const bool found = std::any_of(tags.begin(), tags.end(), [&](const auto& s) { return s && *s == tag; });
    if (!found)
      t.error("partition", "meas(Gamma_" + std::to_string(static_cast<int>(tag) + 1) +
                               ") > 0 required: no side carries " + std::string(to_string(tag)));
  }
  if (t.violations().size() == before) {
    m.partition.left = *tags[static_cast<int>(Side::Left)];
    m.partition.right = *tags[static_cast<int>(Side::Right)];
    m.partition.bottom = *tags[static_cast<int>(Side::Bottom)];
    m.partition.top = *tags[static_cast<int>(Side::Top)];
  }
}

inline void parse_problem(TableReader& t, ProblemSpec& p) {
  t.require("mu_star");
  t.require("r");
  assign(t.number("mu_star"), p.mu_star);
  assign(t.number("r"), p.r);
  assign(t.number("theta"), p.theta);
  assign(t.number("g"), p.g);
  read_pair(t, "f_coeffs", p.f_coeffs);
  if (auto name = t.string("j_kind")) {
    if (auto k = parse_friction_kind(*name))
      p.j_kind = *k;
    else
      t.error("j_kind", "unknown friction law '" + *name + "' (expected smooth_sign or arctan)");
  }
  for (auto& v : check(p)) t.violations().push_back(std::move(v));
}

inline void parse_solver(TableReader& t, SolverConfig& c) {
  assign(t.number("eps"), c.eps);
  if (auto v = t.number("rho")) c.rho = *v;
  assign(t.number("newton_tol"), c.newton_tol);
  assign(t.number("uzawa_tol"), c.uzawa_tol);
  read_int(t, "max_newton", c.max_newton);
  read_int(t, "max_uzawa", c.max_uzawa);
  if (auto v = t.integer("seed")) {
    if (*v < 0)
      t.error("seed", "seed >= 0 required");
    else
      c.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto name = t.string("variant")) {
    if (auto v = parse_uzawa_variant(*name))
      c.variant = *v;
    else
      t.error("variant", "unknown Uzawa variant '" + *name + "' (expected augmented or classic)");
  }
  for (auto& v : check(c)) t.violations().push_back(std::move(v));
}

inline void parse_converge(TableReader& t, ConvergeTask& c, const ProblemSpec& limit, bool problem_ok) {
  const bool has_levels = t.has("levels"), has_count = t.has("count");
  if (has_levels == has_count) t.error("levels", "give exactly one of task.levels or task.count");
  if (auto v = t.integers("levels")) {
    for (auto n : *v) c.levels.push_back(static_cast<int>(std::clamp<std::int64_t>(n, -1, 1 << 30)));
  }
  if (auto v = t.integer("count")) {
    if (*v < 3 || *v > 100000)
      t.error("count", "3 <= count <= 100000 required");
    else
      c.levels = levels_up_to(static_cast<int>(*v));
  }
  auto& s = c.schedule;
  read_pair(t, "f_amp", s.f_amp);
  assign(t.number("theta_amp"), s.theta_amp);
  assign(t.number("g_amp"), s.g_amp);
  assign(t.number("power"), s.power);
  if (t.has("f_fixed")) {
    TractionCoeffs f{};
    read_pair(t, "f_fixed", f);
    s.f_fixed = f;
  }
  if (auto v = t.number("theta_fixed")) s.theta_fixed = *v;
  if (auto v = t.number("g_fixed")) s.g_fixed = *v;
  if (problem_ok && has_levels != has_count)
    for (auto& v : check_schedule(limit, s, c.levels)) t.violations().push_back(std::move(v));
}

inline void parse_optimize(TableReader& t, OptimizeTask& o) {
  t.require("cost");
  if (auto name = t.string("cost")) {
    if (auto k = parse_cost_kind(*name))
      o.cost.kind = *k;
    else
      t.error("cost", "unknown cost '" + *name + "' (expected state_multiplier, trace_g2 or trace_g3)");
  }
  const int n = parameter_count(o.cost.kind);
  assign(t.number("alpha"), o.cost.alpha);
  assign(t.number("beta"), o.cost.beta);
  assign(t.number("delta"), o.cost.delta);
  for (const char* key : {"alpha", "beta", "delta"}) {
    const double v = key[0] == 'a' ? o.cost.alpha : key[0] == 'b' ? o.cost.beta : o.cost.delta;
    if (!(v >= 0.0) || !std::isfinite(v)) t.error(key, std::string(key) + " >= 0 required (cost weight)");
  }
  if (auto name = t.string("target")) {
    if (*name == "zero")
      o.target = TargetKind::Zero;
    else if (*name == "self")
      o.target = TargetKind::Self;
    else
      t.error("target", "unknown target '" + *name + "' (expected zero or self)");
  }
  auto sized = [&](std::string_view key, std::vector<double>& dst) {
    if (auto v = t.numbers(key)) {
      if (static_cast<int>(v->size()) != n)
        t.error(key, std::to_string(n) + " values required for cost " + std::string(to_string(o.cost.kind)));
      else
        dst = *v;
    }
  };
  sized("target_p", o.target_p);
  if (o.target == TargetKind::Self && o.target_p.empty() && !t.has("target_p"))
    t.error("target_p", "required when target = \"self\"");
  if (o.target == TargetKind::Zero && t.has("target_p")) t.error("target_p", "only valid with target = \"self\"");
  o.box = default_box(o.cost.kind);
  sized("lower", o.box.lower);
  sized("upper", o.box.upper);
  for (int i = 0; i < static_cast<int>(o.box.lower.size()) && i < static_cast<int>(o.box.upper.size()); ++i)
    if (!(o.box.lower[i] <= o.box.upper[i])) t.error("lower", "lower <= upper required (nonempty admissible set U)");
  if (n == 1 && !(std::isfinite(o.box.lower[0]) && std::isfinite(o.box.upper[0]) && o.box.upper[0] > o.box.lower[0]))
    t.error("upper", "the scalar search needs a bounded interval of positive length");
  for (std::size_t i = 0; i < o.target_p.size() && i < o.box.lower.size(); ++i)
    if (!(o.target_p[i] >= o.box.lower[i] && o.target_p[i] <= o.box.upper[i]))
      t.error("target_p", "reference parameters must lie in U");
  sized("x0", o.options.x0);
  read_int(t, "budget", o.options.budget);
  read_int(t, "restarts", o.options.restarts);
  assign(t.number("xtol"), o.options.xtol);
  if (o.options.budget < 0) t.error("budget", "budget >= 0 required (0 selects the default)");
  if (o.options.restarts < 1) t.error("restarts", "restarts >= 1 required");
  if (!(o.options.xtol > 0.0)) t.error("xtol", "xtol > 0 required");
}

inline void parse_task(TableReader& t, RunConfig& c, bool problem_ok) {
  t.require("kind");
  std::optional<TaskKind> kind;
  if (auto name = t.string("kind")) {
    kind = parse_task_kind(*name);
    if (!kind) t.error("kind", "unknown task '" + *name + "' (expected solve, oracle, verify, converge or optimize)");
  }
  if (!kind) return;
  c.task = *kind;
  switch (*kind) {
    case TaskKind::Solve: break;
    case TaskKind::Oracle:
      assign(t.number("tolerance"), c.oracle.tolerance);
      if (!(c.oracle.tolerance > 0.0)) t.error("tolerance", "tolerance > 0 required");
      break;
    case TaskKind::Verify: {
      auto& o = c.verify.constants;
      read_int(t, "ascent_starts", o.ascent_starts);
      read_int(t, "lipschitz_samples", o.lipschitz_samples);
      read_int(t, "alpha_samples", o.alpha_samples);
      if (o.ascent_starts < 1) t.error("ascent_starts", "ascent_starts >= 1 required");
      if (o.lipschitz_samples < 1) t.error("lipschitz_samples", "lipschitz_samples >= 1 required");
      if (o.alpha_samples < 1) t.error("alpha_samples", "alpha_samples >= 1 required");
      break;
    }
    case TaskKind::Converge: parse_converge(t, c.converge, c.problem, problem_ok); break;
    case TaskKind::Optimize: parse_optimize(t, c.optimize); break;
  }
  t.finish("not valid for task kind '" + std::string(to_string(*kind)) + "'");
}

inline void parse_output(TableReader& t, OutputConfig& o) {
  assign(t.string("directory"), o.directory);
  if (o.directory.empty()) t.error("directory", "directory must be nonempty");
  if (auto formats = t.strings("formats")) {
    o.csv = o.json = false;
    for (const auto& f : *formats) {
      if (f == "csv")
        o.csv = true;
      else if (f == "json")
        o.json = true;
      else
        t.error("formats", "unknown format '" + f + "' (expected csv or json)");
    }
    if (formats->empty()) t.error("formats", "at least one format required");
  }
  assign(t.boolean("mesh"), o.mesh);
  if (o.mesh && !o.json) t.error("mesh", "the mesh export is JSON and needs \"json\" in output.formats");
}

}  // namespace detail

/// Parses and validates a TOML document against the strict run schema.
inline ConfigResult parse_config(std::string_view text, std::string_view source = "config") {
  ConfigResult result;
  auto& out = result.violations;
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " (line " << e.source().begin.line << ", column " << e.source().begin.column << ")";
    out.push_back({"toml", msg.str()});
    return result;
  }

  RunConfig c;
  detail::TableReader top(&root, "", out);
  auto block = [&](std::string_view name, bool required) -> const toml::table* {
    if (required && !top.has(name)) {
      out.push_back({std::string(name), "required block is missing"});
      return nullptr;
    }
    return top.table(name);
  };

  if (const auto* t = block("mesh", true)) {
    detail::TableReader r(t, "mesh", out);
    detail::parse_mesh(r, c.mesh);
    r.finish();
  }
  bool problem_ok = false;
  if (const auto* t = block("problem", true)) {
    const std::size_t before = out.size();
    detail::TableReader r(t, "problem", out);
    detail::parse_problem(r, c.problem);
    r.finish();
    problem_ok = out.size() == before;
  }
  if (const auto* t = block("solver", false)) {
    detail::TableReader r(t, "solver", out);
    detail::parse_solver(r, c.solver);
    r.finish();
  }
  if (const auto* t = block("task", true)) {
    detail::TableReader r(t, "task", out);
    detail::parse_task(r, c, problem_ok);
  }
  if (const auto* t = block("output", false)) {
    detail::TableReader r(t, "output", out);
    detail::parse_output(r, c.output);
    r.finish();
  }
  top.finish();
  if (out.empty()) result.config = std::move(c);
  return result;
}

/// Thrown when the config file cannot be read at all.
struct ConfigReadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline ConfigResult load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigReadError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str(), path.string());
}


}  // namespace mixedvi

#endif  // MIXEDVI_CONFIG_HPP
