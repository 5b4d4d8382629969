#ifndef MIXEDVI_IO_HPP
#define MIXEDVI_IO_HPP

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixedvi/analysis.hpp"
#include "mixedvi/mesh.hpp"
#include "mixedvi/solver.hpp"

namespace mixedvi::io {

/// Version of the CSV column layouts and the JSON documents. Bump on any
/// change to a header row or a JSON key.
inline constexpr int kSchemaVersion = 1;

/// Round-trip decimal form ("%.17g"); "inf", "-inf" and "nan" for
/// non-finite values. Independent of the stream locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Non-finite doubles become strings so no information is lost to null.
inline nlohmann::json json_double(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

namespace detail {

inline std::string join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

}  // namespace detail

/// node,x,y,u with one row per mesh node.
inline std::string u_csv(const Mesh& mesh, const Vector& u) {
  std::string out = "node,x,y,u\n";
  for (int n = 0; n < mesh.num_nodes(); ++n)
    out += detail::join({std::to_string(n), format_double(mesh.nodes[n].x), format_double(mesh.nodes[n].y),
                         format_double(u[n])});
  return out;
}

/// One row per G3 edge in multiplier order.
inline std::string lambda_csv(const Mesh& mesh, const Vector& lam) {
  std::string out = "edge,node0,node1,x0,y0,x1,y1,length,lambda\n";
  const auto edges = trace_dofs(mesh, Tag::G3);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    const Point& a = mesh.nodes[e.nodes[0]];
    const Point& b = mesh.nodes[e.nodes[1]];
    out += detail::join({std::to_string(e.edge), std::to_string(e.nodes[0]), std::to_string(e.nodes[1]),
                         format_double(a.x), format_double(a.y), format_double(b.x), format_double(b.y),
                         format_double(e.length), format_double(lam[static_cast<Eigen::Index>(k)])});
  }
  return out;
}

/// One row per perturbation level.
inline std::string table_csv(const ConvergenceTable& table) {
  std::vector<std::string> head{"n", "f0", "f1", "theta", "g", "x_gap", "y_gap"};
  for (int k = 1; k <= kNumProbes; ++k) head.push_back("probe_" + std::to_string(k));
  for (const char* h : {"converged", "status", "uzawa_iters", "newton_iters", "final_residual"}) head.push_back(h);
  std::string out = detail::join(head);
  for (const auto& r : table.rows) {
    std::vector<std::string> cells{std::to_string(r.n),           format_double(r.data.f_coeffs[0]),
                                   format_double(r.data.f_coeffs[1]), format_double(r.data.theta),
                                   format_double(r.data.g),       format_double(r.x_gap),
                                   format_double(r.y_gap)};
    for (double p : r.probe_gaps) cells.push_back(format_double(p));
    cells.push_back(r.diagnostics.converged ? "1" : "0");
    cells.emplace_back(to_string(r.diagnostics.status));
    cells.push_back(std::to_string(r.diagnostics.uzawa_iters));
    cells.push_back(std::to_string(r.diagnostics.newton_iters_total));
    cells.push_back(format_double(r.diagnostics.final_residual));
    out += detail::join(cells);
  }
  return out;
}

/// One row per forward solve, in evaluation order.
inline std::string trace_csv(const OptimizationResult& result, int num_params) {
  std::vector<std::string> head{"eval"};
  for (int i = 1; i <= num_params; ++i) head.push_back("p_" + std::to_string(i));
  head.push_back("cost");
  head.push_back("status");
  std::string out = detail::join(head);
  for (std::size_t k = 0; k < result.trace.size(); ++k) {
    const auto& e = result.trace[k];
    std::vector<std::string> cells{std::to_string(k + 1)};
    for (double p : e.p) cells.push_back(format_double(p));
    cells.push_back(format_double(e.cost));
    cells.emplace_back(to_string(e.status));
    out += detail::join(cells);
  }
  return out;
}

inline nlohmann::json to_json(const SolveDiagnostics& d) {
  nlohmann::json hist = nlohmann::json::array();
  for (double h : d.residual_history) hist.push_back(json_double(h));
  return {{"converged", d.converged},
          {"status", to_string(d.status)},
          {"uzawa_iters", d.uzawa_iters},
          {"newton_iters_total", d.newton_iters_total},
          {"final_residual", json_double(d.final_residual)},
          {"residual_history", hist}};
}

inline nlohmann::json to_json(const ProblemSpec& s) {
  return {{"mu_star", s.mu_star}, {"r", s.r},
          {"theta", s.theta},     {"g", s.g},
          {"f_coeffs", {s.f_coeffs[0], s.f_coeffs[1]}}, {"j_kind", to_string(s.j_kind)}};
}

inline nlohmann::json to_json(const ConstantsReport& c) {
  return {{"schema_version", kSchemaVersion},
          {"M", json_double(c.M)},
          {"q", json_double(c.q)},
          {"m", json_double(c.m)},
          {"c0_h", json_double(c.c0_h)},
          {"c_h", json_double(c.c_h)},
          {"alpha_h", json_double(c.alpha_h)},
          {"f_dual_norm", json_double(c.f_dual_norm)},
          {"M1_h", json_double(c.M1_h)},
          {"L_K1_h", json_double(c.L_K1_h)},
          {"lambda_bound_h", json_double(c.lambda_bound_h)},
          {"c0_exact", c.c0_exact},
          {"c_upper_bound", c.c_upper_bound},
          {"alpha_exact", c.alpha_exact},
          {"L_exact", c.L_exact},
          {"inf_sup_failure", c.inf_sup_failure}};
}

inline nlohmann::json to_json(const BoundsCheck& b) {
  return {{"x_norm_u", json_double(b.x_norm_u)},
          {"primal_bound", json_double(b.primal_bound)},
          {"primal_ok", b.primal_ok},
          {"primal_margin", json_double(b.primal_margin())},
          {"y_norm_lam", json_double(b.y_norm_lam)},
          {"dual_bound", json_double(b.dual_bound)},
          {"dual_ok", b.dual_ok},
          {"dual_asserted", b.dual_asserted},
          {"dual_margin", json_double(b.dual_margin())}};
}

/// Writes `text` verbatim (binary mode, no newline translation).
inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace mixedvi::io

#endif  // MIXEDVI_IO_HPP
