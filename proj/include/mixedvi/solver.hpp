#ifndef MIXEDVI_SOLVER_HPP
#define MIXEDVI_SOLVER_HPP

// Discrete mixed problem: find u (u = 0 on G1) and lam with |lam_e| <= theta
// such that
//
//   A(u) + G(u) + B^T lam = F        on free dofs,
//   lam_e = theta sign((B u)_e)      where (B u)_e != 0.
//
// uzawa_solve alternates a Newton solve in u with a projected ascent step in
// lam. oracle_minimize reaches the same u by minimizing the convex energy
// directly and is kept independent of the Uzawa path.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "mixedvi/assembly.hpp"
#include "mixedvi/mesh.hpp"
#include "mixedvi/problem.hpp"

namespace mixedvi {

struct DiscreteState {
  Vector u;    // nodal
  Vector lam;  // per G3 edge, trace_dofs order
};

/// How u is computed between two multiplier updates.
enum class UzawaVariant {
  // u minimizes the augmented Lagrangian: the multiplier seen by the inner
  // equation is clamp(lam + rho * t(u)) itself. Converges for every rho > 0,
  // faster for larger rho.
  Augmented,
  // u solves A(u) + G(u) + B^T lam = F at the frozen multiplier. Needs
  // rho < 2 / |S| and slows down as the discrete inf-sup constant shrinks.
  Classic,
};

inline std::string_view to_string(UzawaVariant v) {
  return v == UzawaVariant::Augmented ? "augmented" : "classic";
}

inline std::optional<UzawaVariant> parse_uzawa_variant(std::string_view s) {
  if (s == "augmented") return UzawaVariant::Augmented;
  if (s == "classic") return UzawaVariant::Classic;
  return std::nullopt;
}

struct SolverConfig {
  double eps = 1e-6;                // gradient regularization inside Newton
  std::optional<double> rho;        // Uzawa step; default from default_rho()
  double newton_tol = 1e-10;
  double uzawa_tol = 1e-10;
  int max_newton = 50;
  int max_uzawa = 20000;
  std::uint64_t seed = 0;
  UzawaVariant variant = UzawaVariant::Augmented;

  /// Classic: 0.5 mu* for r = 2, 0.1 mu* otherwise. Augmented: 10 mu* n^3 / |G3|
  /// for n multiplier edges, which keeps the dual contraction factor near 1/3
  /// across refinements (the smallest eigenvalue of the multiplier Schur
  /// complement decays like h^3).
  static double default_rho(const ProblemSpec& spec, UzawaVariant variant, int num_edges, double g3_measure) {
    if (variant == UzawaVariant::Classic) return (spec.r == 2.0 ? 0.5 : 0.1) * spec.mu_star;
    const double n = std::max(1, num_edges);
    return 10.0 * spec.mu_star * n * n * n / g3_measure;
  }
};

inline std::vector<Violation> check(const SolverConfig& c) {
  std::vector<Violation> out;
  if (!(c.eps > 0.0)) out.push_back({"solver.eps", "eps > 0 required"});
  if (c.rho && !(*c.rho > 0.0)) out.push_back({"solver.rho", "rho > 0 required"});
  if (!(c.newton_tol > 0.0)) out.push_back({"solver.newton_tol", "newton_tol > 0 required"});
  if (!(c.uzawa_tol > 0.0)) out.push_back({"solver.uzawa_tol", "uzawa_tol > 0 required"});
  if (c.max_newton < 1) out.push_back({"solver.max_newton", "max_newton >= 1 required"});
  if (c.max_uzawa < 1) out.push_back({"solver.max_uzawa", "max_uzawa >= 1 required"});
  return out;
}

enum class SolveStatus {
  Converged,
  IterationLimit,    // caps hit; best iterate returned
  LineSearchFailed,  // Newton could not reduce the residual
  SingularTangent,   // factorization failed
  RankDeficient,     // B^T has dependent columns (discrete inf-sup failure)
};

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::IterationLimit: return "iteration_limit";
    case SolveStatus::LineSearchFailed: return "line_search_failed";
    case SolveStatus::SingularTangent: return "singular_tangent";
    case SolveStatus::RankDeficient: return "rank_deficient";
  }
  return "?";
}

struct SolveDiagnostics {
  int uzawa_iters = 0;
  int newton_iters_total = 0;
  std::vector<double> residual_history;  // Newton residual norms, inner solves concatenated
  double final_residual = std::numeric_limits<double>::infinity();  // with eps = 0
  bool converged = false;
  SolveStatus status = SolveStatus::IterationLimit;
};

/// Componentwise clamp onto the multiplier box [-theta, theta].
inline Vector project_Lambda(const Vector& lam, double theta) {
  if (theta < 0.0) throw std::invalid_argument("project_Lambda: theta must be >= 0");
  return lam.cwiseMax(-theta).cwiseMin(theta);
}

struct NewtonResult {
  Vector u;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  std::vector<double> history;
  SolveStatus status = SolveStatus::IterationLimit;

  bool converged() const { return status == SolveStatus::Converged; }
};

namespace detail {

/// A(u) + G(u) + B^T lam - F on free dofs.
inline Vector inner_residual(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                             const Vector& lam, const Vector& u, double eps) {
  Vector full = apply_A(mesh, u, spec.mu_star, spec.r, eps) + friction_residual_g4(mesh, u, spec.g, spec.friction()) +
                ops.coupling.transpose() * lam - ops.load;
  return restrict_to_free(full, ops);
}

inline SparseMatrix inner_tangent(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                                  const Vector& u, double eps) {
  const double e = spec.r == 2.0 ? 0.0 : eps;
  SparseMatrix K = tangent_A(mesh, u, spec.mu_star, spec.r, e) + friction_tangent_g4(mesh, u, spec.g, spec.friction());
  return restrict_to_free(K, ops);
}

inline Vector zero_dirichlet(const Mesh& mesh, Vector u) {
  for (int n : mesh.dirichlet_nodes) u[n] = 0.0;
  return u;
}

/// Multiplier entering the inner equation. With rho = 0 it is the frozen
/// `base`; otherwise clamp(base + rho * (B u)_e / |e|, -theta, theta).
struct InnerMultiplier {
  Vector base;
  double rho = 0.0;
  double theta = 0.0;
  Vector edge_len;

  Vector at(const DiscreteOperatorSet& ops, const Vector& u) const {
    if (rho == 0.0) return base;
    return project_Lambda(base + rho * (ops.coupling * u).cwiseQuotient(edge_len), theta);
  }

  /// Generalized derivative d lam_e / d (B u)_e.
  Vector slope(const DiscreteOperatorSet& ops, const Vector& u) const {
    Vector d = Vector::Zero(base.size());
    if (rho == 0.0) return d;
    const Vector z = base + rho * (ops.coupling * u).cwiseQuotient(edge_len);
    for (int e = 0; e < d.size(); ++e)
      if (std::abs(z[e]) < theta) d[e] = rho / edge_len[e];
    return d;
  }
};

/// `min_steps` forces Newton corrections even below tolerance; a step that
/// cannot reduce an already converged residual is not a failure.
inline NewtonResult newton_core(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                                const InnerMultiplier& mult, const SolverConfig& cfg, const Vector& u0,
                                int min_steps = 0) {
  if (spec.r > 2.0 && !(cfg.eps > 0.0)) throw std::invalid_argument("newton_inner: eps > 0 required for r > 2");
  if (u0.size() != mesh.num_nodes()) throw std::invalid_argument("newton_inner: initial field has the wrong size");
  auto residual = [&](const Vector& u) { return inner_residual(mesh, spec, ops, mult.at(ops, u), u, cfg.eps); };

  NewtonResult out;
  out.u = zero_dirichlet(mesh, u0);
  Vector res = residual(out.u);
  out.residual = res.norm();
  out.history.push_back(out.residual);

  constexpr int kMaxHalvings = 40;
  constexpr std::array<double, 5> kDampingLevels{0.0, 1e-4, 1e-2, 1.0, 1e2};
  const SparseMatrix stiffness_free = restrict_to_free(stiffness_matrix(mesh), ops);
  while (true) {
    if (out.residual <= cfg.newton_tol && out.iterations >= min_steps) {
      out.status = SolveStatus::Converged;
      return out;
    }
    if (out.iterations >= cfg.max_newton) {
      out.status = out.residual <= cfg.newton_tol ? SolveStatus::Converged : SolveStatus::IterationLimit;
      return out;
    }
    SparseMatrix J = inner_tangent(mesh, spec, ops, out.u, cfg.eps);
    if (mult.rho != 0.0) {
      const SparseMatrix BtDB = ops.coupling.transpose() * mult.slope(ops, out.u).asDiagonal() * ops.coupling;
      J += restrict_to_free(BtDB, ops);
    }
    // Plain Newton first; if no step length reduces the residual, retry with
    // the tangent shifted by sigma * mu* K (K the Laplacian stiffness). This
    // covers starts where the tangent nearly vanishes, e.g. u0 = 0 for r > 2.
    bool accepted = false;
    for (double sigma : kDampingLevels) {
      SparseMatrix Js = J;
      if (sigma > 0.0) Js += (sigma * spec.mu_star) * stiffness_free;
      Eigen::SimplicialLDLT<SparseMatrix> ldlt(Js);
      if (ldlt.info() != Eigen::Success) {
        if (sigma == 0.0) continue;
        out.status = SolveStatus::SingularTangent;
        return out;
      }
      const Vector step = extend_from_free(ldlt.solve(-res), ops, mesh.num_nodes());
      if (!step.allFinite()) continue;
      double t = 1.0;
      for (int h = 0; h <= kMaxHalvings && !accepted; ++h, t *= 0.5) {
        Vector trial = out.u + t * step;
        Vector trial_res = residual(trial);
        const double norm = trial_res.norm();
        if (norm < out.residual) {
          out.u = std::move(trial);
          res = std::move(trial_res);
          out.residual = norm;
          accepted = true;
        }
      }
      if (accepted) break;
    }
    if (!accepted) {
      out.status = out.residual <= cfg.newton_tol ? SolveStatus::Converged : SolveStatus::LineSearchFailed;
      return out;
    }
    ++out.iterations;
    out.history.push_back(out.residual);
  }
}

}  // namespace detail

/// Starting field for Newton: the linear (r = 2) response to the load,
/// rescaled so that (A(t w), w) matches the load work. Exact whenever the
/// solution is a multiple of the linear one.
inline Vector initial_guess(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                            const Vector& lam) {
  const Vector rhs = restrict_to_free(ops.load - ops.coupling.transpose() * lam, ops);
  if (rhs.squaredNorm() == 0.0) return Vector::Zero(mesh.num_nodes());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(restrict_to_free(stiffness_matrix(mesh), ops));
  if (ldlt.info() != Eigen::Success) return Vector::Zero(mesh.num_nodes());
  const Vector w = extend_from_free(ldlt.solve(rhs), ops, mesh.num_nodes());
  const double work = rhs.dot(restrict_to_free(w, ops));
  const double response = apply_A(mesh, w, spec.mu_star, spec.r).dot(w);
  if (!(work > 0.0) || !(response > 0.0)) return w / spec.mu_star;
  return std::pow(work / response, 1.0 / (spec.r - 1.0)) * w;
}

/// Solves A(u) + G(u) + B^T lam = F on free dofs by Newton with a halving
/// line search on the residual norm.
inline NewtonResult newton_inner(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                                 const Vector& lam, const SolverConfig& cfg, const Vector& u0) {
  return detail::newton_core(mesh, spec, ops, {lam, 0.0, spec.theta, {}}, cfg, u0);
}

inline NewtonResult newton_inner(const Mesh& mesh, const ProblemSpec& spec, const Vector& lam,
                                 const SolverConfig& cfg, const Vector& u0) {
  return newton_inner(mesh, spec, assemble_operators(mesh, spec), lam, cfg, u0);
}

/// Euclidean residual norm of the inner equation on free dofs, exact operator.
inline double exact_residual(const Mesh& mesh, const ProblemSpec& spec, const DiscreteOperatorSet& ops,
                             const DiscreteState& state) {
  return detail::inner_residual(mesh, spec, ops, state.lam, state.u, 0.0).norm();
}

/// Uniform random state: u in [-1, 1] on free nodes, lam in the box.
inline DiscreteState random_state(const Mesh& mesh, const ProblemSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  DiscreteState s;
  s.u = Vector::Zero(mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) s.u[n] = unit(rng);
  s.u = detail::zero_dirichlet(mesh, std::move(s.u));
  const int m = static_cast<int>(trace_dofs(mesh, Tag::G3).size());
  s.lam.resize(m);
  for (int e = 0; e < m; ++e) s.lam[e] = spec.theta * unit(rng);
  return s;
}

struct SolveResult {
  DiscreteState state;
  SolveDiagnostics diagnostics;
};

/// Projected Uzawa iteration on the multiplier,
///
///   lam^{k+1} = clamp(lam^k + rho * (B u^{k+1})_e / |e|, -theta, theta),
///
/// an ascent step along the L2(G3) representative of b(u, .). In the
/// augmented variant u^{k+1} solves
///   A(u) + G(u) + B^T clamp(lam^k + rho (B u)_e / |e|) = F
/// so the new multiplier is exactly the one u^{k+1} balances; in the classic
/// variant u^{k+1} solves A(u) + G(u) + B^T lam^k = F and a final inner solve
/// pairs u with the last multiplier. Both stop when
/// ||lam^{k+1} - lam^k||_Y <= uzawa_tol * max(1, ||lam^k||_Y).
inline SolveResult uzawa_solve(const Mesh& mesh, const ProblemSpec& spec, const SolverConfig& cfg,
                               const std::optional<DiscreteState>& initial = std::nullopt) {
  validate(spec);
  if (auto v = check(cfg); !v.empty()) throw std::invalid_argument(v.front().field + ": " + v.front().message);
  const auto ops = assemble_operators(mesh, spec);
  const int m = ops.num_multipliers();

  Vector edge_len(m);
  for (int e = 0; e < m; ++e) edge_len[e] = ops.gamma3[e].length;
  const double rho =
      cfg.rho.value_or(SolverConfig::default_rho(spec, cfg.variant, m, edge_len.sum()));
  const bool augmented = cfg.variant == UzawaVariant::Augmented;

  SolveResult out;
  auto& diag = out.diagnostics;
  if (initial && initial->lam.size() != m)
    throw std::invalid_argument("uzawa_solve: initial multiplier has the wrong size");
  Vector lam = initial ? project_Lambda(initial->lam, spec.theta) : Vector::Zero(m);
  if (initial && initial->u.size() != mesh.num_nodes())
    throw std::invalid_argument("uzawa_solve: initial field has the wrong size");
  Vector u = initial ? detail::zero_dirichlet(mesh, initial->u) : initial_guess(mesh, spec, ops, lam);

  auto inner = [&](const Vector& multiplier, double step, const Vector& start) {
    NewtonResult nr =
        detail::newton_core(mesh, spec, ops, {multiplier, step, spec.theta, edge_len}, cfg, start, step > 0.0 ? 1 : 0);
    diag.newton_iters_total += nr.iterations;
    diag.residual_history.insert(diag.residual_history.end(), nr.history.begin(), nr.history.end());
    return nr;
  };
  auto finish = [&](Vector uf, Vector lf, SolveStatus status) {
    out.state = {std::move(uf), std::move(lf)};
    diag.status = status;
    diag.converged = status == SolveStatus::Converged;
    diag.final_residual = exact_residual(mesh, spec, ops, out.state);
    return out;
  };

  for (int k = 0; k < cfg.max_uzawa; ++k) {
    NewtonResult nr = inner(lam, augmented ? rho : 0.0, u);
    u = nr.u;
    if (!nr.converged()) return finish(u, lam, nr.status);
    ++diag.uzawa_iters;

    const Vector slip = (ops.coupling * u).cwiseQuotient(edge_len);
    Vector next = project_Lambda(lam + rho * slip, spec.theta);
    const double change = y_norm(mesh, next - lam, spec.r);
    const double scale = std::max(1.0, y_norm(mesh, lam, spec.r));
    lam = std::move(next);
    if (change <= cfg.uzawa_tol * scale) {
      if (augmented) return finish(u, lam, SolveStatus::Converged);
      NewtonResult last = inner(lam, 0.0, u);
      return finish(last.u, lam, last.converged() ? SolveStatus::Converged : last.status);
    }
  }
  return finish(u, lam, SolveStatus::IterationLimit);
}

struct MultiplierRecovery {
  Vector lam;
  bool ok = false;
  int rank = 0;
};

/// Least-squares solution of B^T lam = F - A(u) - G(u) on free dofs, clamped
/// into the multiplier box.
inline MultiplierRecovery recover_multiplier(const Mesh& mesh, const ProblemSpec& spec, const Vector& u,
                                             double eps = 0.0) {
  const auto ops = assemble_operators(mesh, spec);
  const int m = ops.num_multipliers();
  const Vector target =
      restrict_to_free(ops.load - apply_A(mesh, u, spec.mu_star, spec.r, eps) -
                           friction_residual_g4(mesh, u, spec.g, spec.friction()),
                       ops);
  Eigen::MatrixXd Bt = Eigen::MatrixXd::Zero(ops.num_free(), m);
  for (int col = 0; col < ops.coupling.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(ops.coupling, col); it; ++it)
      if (const int f = ops.free_index[it.col()]; f >= 0) Bt(f, it.row()) = it.value();

  MultiplierRecovery out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Bt);
  qr.setThreshold(1e-12);
  out.rank = static_cast<int>(qr.rank());
  if (out.rank < m) {
    out.lam = Vector::Zero(m);
    return out;
  }
  out.lam = project_Lambda(qr.solve(target), spec.theta);
  out.ok = true;
  return out;
}

namespace detail {

/// Smoothed convex energy minimized by the oracle:
///   (mu*/r) sum_T |T| ((|grad u|^2 + eps^2)^{r/2} - eps^r)
/// + theta sum_e (sqrt((B u)_e^2 + delta^2) - delta) + g \int_G4 Jhat(u) - F.u
struct SmoothedEnergy {
  const Mesh& mesh;
  const ProblemSpec& spec;
  const DiscreteOperatorSet& ops;
  double eps;
  double delta;

  double value(const Vector& u) const {
    double bulk = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      const auto geo = element_geometry(mesh, t);
      const auto [gx, gy] = element_gradient(mesh, geo, t, u);
      bulk += geo.area * (std::pow(gx * gx + gy * gy + eps * eps, 0.5 * spec.r) - std::pow(eps, spec.r));
    }
    const Vector s = ops.coupling * u;
    double g3 = 0.0;
    for (int e = 0; e < s.size(); ++e) g3 += std::sqrt(s[e] * s[e] + delta * delta) - delta;
    const FrictionLaw law = spec.friction();
    double g4 = 0.0;
    for (const auto& te : ops.gamma4)
      for (double q : kGaussPts)
        g4 += 0.5 * te.length * law.potential((1.0 - q) * u[te.nodes[0]] + q * u[te.nodes[1]]);
    return spec.mu_star / spec.r * bulk + spec.theta * g3 + spec.g * g4 - ops.load.dot(u);
  }

  Vector smoothed_multiplier(const Vector& u) const {
    const Vector s = ops.coupling * u;
    Vector lam(s.size());
    for (int e = 0; e < s.size(); ++e) lam[e] = spec.theta * s[e] / std::sqrt(s[e] * s[e] + delta * delta);
    return lam;
  }

  Vector gradient(const Vector& u) const {
    return inner_residual(mesh, spec, ops, smoothed_multiplier(u), u, eps);
  }

  SparseMatrix hessian(const Vector& u) const {
    const Vector s = ops.coupling * u;
    Vector curv(s.size());
    for (int e = 0; e < s.size(); ++e) {
      const double q = s[e] * s[e] + delta * delta;
      curv[e] = spec.theta * delta * delta / (q * std::sqrt(q));
    }
    SparseMatrix H = inner_tangent(mesh, spec, ops, u, eps);
    SparseMatrix BtDB = ops.coupling.transpose() * curv.asDiagonal() * ops.coupling;
    return H + restrict_to_free(BtDB, ops);
  }
};

}  // namespace detail

/// Delta schedule of the G3 smoothing |s| -> sqrt(s^2 + delta^2).
inline constexpr std::array<double, 9> kOracleDeltas{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10};

/// Independent solution path: Newton with Armijo backtracking on the smoothed
/// energy for each delta, warm-started along the schedule; lam recovered by
/// least squares and clamped.
inline SolveResult oracle_minimize(const Mesh& mesh, const ProblemSpec& spec, const SolverConfig& cfg) {
  validate(spec);
  if (auto v = check(cfg); !v.empty()) throw std::invalid_argument(v.front().field + ": " + v.front().message);
  const auto ops = assemble_operators(mesh, spec);
  const int m = ops.num_multipliers();
  SolveResult out;
  auto& diag = out.diagnostics;

  Vector u = initial_guess(mesh, spec, ops, Vector::Zero(m));
  const int max_steps = std::max(cfg.max_newton, 100);
  SolveStatus status = SolveStatus::Converged;

  for (double delta : kOracleDeltas) {
    const detail::SmoothedEnergy energy{mesh, spec, ops, cfg.eps, delta};
    double value = energy.value(u);
    Vector grad = energy.gradient(u);
    double gnorm = grad.norm();
    diag.residual_history.push_back(gnorm);
    int steps = 0;
    status = SolveStatus::IterationLimit;
    while (steps < max_steps) {
      if (gnorm <= 1e-10 * std::max(1.0, std::abs(value))) {
        status = SolveStatus::Converged;
        break;
      }
      Eigen::SimplicialLDLT<SparseMatrix> ldlt(energy.hessian(u));
      if (ldlt.info() != Eigen::Success) {
        status = SolveStatus::SingularTangent;
        break;
      }
      const Vector dir = extend_from_free(ldlt.solve(-grad), ops, mesh.num_nodes());
      const double slope = restrict_to_free(dir, ops).dot(grad);
      double t = 1.0;
      bool accepted = false;
      for (int h = 0; h <= 50; ++h, t *= 0.5) {
        Vector trial = u + t * dir;
        const double tv = energy.value(trial);
        Vector tg = energy.gradient(trial);
        const double tn = tg.norm();
        // Armijo, or a gradient decrease once energy differences sit at rounding level.
        const bool armijo = tv <= value + 1e-4 * t * slope;
        const bool flat = std::abs(tv - value) <= 1e-13 * std::max(1.0, std::abs(value)) && tn < gnorm;
        if (armijo || flat) {
          u = std::move(trial);
          value = tv;
          grad = std::move(tg);
          gnorm = tn;
          accepted = true;
          break;
        }
      }
      ++steps;
      diag.residual_history.push_back(gnorm);
      if (!accepted) {
        status = SolveStatus::LineSearchFailed;
        break;
      }
    }
    diag.newton_iters_total += steps;
    if (status != SolveStatus::Converged) break;
  }

  const MultiplierRecovery rec = recover_multiplier(mesh, spec, u, cfg.eps);
  if (!rec.ok && status == SolveStatus::Converged) status = SolveStatus::RankDeficient;
  out.state = {u, rec.lam};
  diag.status = status;
  diag.converged = status == SolveStatus::Converged;
  diag.final_residual = exact_residual(mesh, spec, ops, out.state);
  return out;
}

}  // namespace mixedvi

#endif  // MIXEDVI_SOLVER_HPP
