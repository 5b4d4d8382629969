#ifndef MIXEDVI_ANALYSIS_HPP
#define MIXEDVI_ANALYSIS_HPP

// Discrete constants behind the a priori bounds, bound verification, data
// convergence studies and the parameter identification problems.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
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
#include "mixedvi/parallel.hpp"
#include "mixedvi/problem.hpp"
#include "mixedvi/solver.hpp"

namespace mixedvi {

// ---------------------------------------------------------------- constants

struct ConstantsReport {
  double M = 0.0;  // mu* / (2^{r-2} r), coercivity constant of A in the X norm
  double q = 0.0;  // = r
  double m = 0.0;
  double c0_h = 0.0;            // sup ||v||_{L^r(G2)} / ||v||_X
  double c_h = 0.0;             // g M_j sup (G4 L1 functional) / ||v||_X
  double alpha_h = 0.0;         // discrete inf-sup constant of B
  double f_dual_norm = 0.0;     // ||f||_{Z'}
  double M1_h = 0.0;            // primal bound
  double L_K1_h = 0.0;          // Lipschitz constant of A on the ball of radius M1_h
  double lambda_bound_h = 0.0;  // dual bound
  bool c0_exact = false;        // eigenvalue computation (r = 2) rather than sampled ascent
  bool c_upper_bound = false;   // c_h is a guaranteed upper bound (r = 2)
  bool alpha_exact = false;     // generalized eigenvalue (r = 2) rather than sampled
  bool L_exact = false;         // A linear (r = 2): L = mu*
  bool inf_sup_failure = false; // alpha_h <= 1e-12
};

struct ConstantsOptions {
  int ascent_starts = 20;
  int lipschitz_samples = 200;
  int alpha_samples = 20;
  std::uint64_t seed = 0;
};

inline double coercivity_constant(const ProblemSpec& spec) {
  return spec.mu_star / (std::pow(2.0, spec.r - 2.0) * spec.r);
}

namespace detail {

// 8-point Gauss-Legendre on [0, 1].
inline constexpr std::array<double, 8> kGL8Pts{0.01985507175123188416, 0.10166676129318663020, 0.23723379504183550709,
                                               0.40828267875217509753, 0.59171732124782490247, 0.76276620495816449291,
                                               0.89833323870681336980, 0.98014492824876811584};
inline constexpr std::array<double, 8> kGL8Wts{0.05061426814518812957, 0.11119051722668723527, 0.15685332293894364366,
                                               0.18134189168918099149, 0.18134189168918099149, 0.15685332293894364366,
                                               0.11119051722668723527, 0.05061426814518812957};

inline Vector free_mask(const Mesh& mesh, Vector v) { return zero_dirichlet(mesh, std::move(v)); }

/// Gradient of ||v||_{L^p(tag)} (p >= 2), 8-point Gauss per edge.
inline Vector trace_lp_gradient(const Mesh& mesh, Tag tag, const Vector& v, double p) {
  Vector grad = Vector::Zero(mesh.num_nodes());
  const double norm = trace_lp_norm(mesh, tag, v, p);
  if (norm == 0.0) return grad;
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != tag) continue;
    for (int k = 0; k < 8; ++k) {
      const double s = kGL8Pts[k];
      const double w = (1.0 - s) * v[e.nodes[0]] + s * v[e.nodes[1]];
      const double d = kGL8Wts[k] * e.length * std::pow(std::abs(w), p - 2.0) * w;
      grad[e.nodes[0]] += d * (1.0 - s);
      grad[e.nodes[1]] += d * s;
    }
  }
  return std::pow(norm, 1.0 - p) * grad;
}

/// Subgradient of gauss_trace_l1.
inline Vector gauss_l1_gradient(const Mesh& mesh, Tag tag, const Vector& v) {
  Vector grad = Vector::Zero(mesh.num_nodes());
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != tag) continue;
    for (double s : kGaussPts) {
      const double w = (1.0 - s) * v[e.nodes[0]] + s * v[e.nodes[1]];
      const double d = 0.5 * e.length * (w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0));
      grad[e.nodes[0]] += d * (1.0 - s);
      grad[e.nodes[1]] += d * s;
    }
  }
  return grad;
}

/// max over seeded starts of N(v) / ||v||_X, N positively 1-homogeneous.
/// Gradient ascent on the X unit sphere with step doubling/halving; every
/// evaluated ratio is attained, so the result never exceeds the supremum.
inline double ascend_ratio(const Mesh& mesh, double r, const std::function<double(const Vector&)>& num,
                           const std::function<Vector(const Vector&)>& num_grad, int starts, std::uint64_t seed) {
  double best = 0.0;
  for (int s = 0; s < starts; ++s) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vector v(mesh.num_nodes());
    for (int n = 0; n < mesh.num_nodes(); ++n) v[n] = unit(rng);
    v = free_mask(mesh, std::move(v));
    double xn = x_norm(mesh, v, r);
    if (xn == 0.0) continue;
    v /= xn;
    double R = num(v);
    double step = 0.1;
    for (int it = 0; it < 400; ++it) {
      const Vector g = free_mask(mesh, num_grad(v) - R * apply_A(mesh, v, 1.0, r));
      const double gn = g.norm();
      if (gn == 0.0) break;
      bool accepted = false;
      double trial_R = R;
      Vector trial;
      for (int h = 0; h < 40; ++h, step *= 0.5) {
        trial = v + (step / gn) * g;
        trial /= x_norm(mesh, trial, r);
        trial_R = num(trial);
        if (trial_R > R) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      const double gain = trial_R - R;
      v = std::move(trial);
      R = trial_R;
      step = std::min(2.0 * step, 1.0);
      if (gain <= 1e-14 * R) break;
    }
    best = std::max(best, R);
  }
  return best;
}

inline SparseMatrix free_stiffness(const Mesh& mesh, const DiscreteOperatorSet& ops) {
  return restrict_to_free(stiffness_matrix(mesh), ops);
}

/// P1 boundary mass matrix of `tag` on free dofs (dense).
inline Eigen::MatrixXd boundary_mass(const Mesh& mesh, const DiscreteOperatorSet& ops, Tag tag) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(ops.num_free(), ops.num_free());
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != tag) continue;
    const int a = ops.free_index[e.nodes[0]], b = ops.free_index[e.nodes[1]];
    if (a >= 0) M(a, a) += e.length / 3.0;
    if (b >= 0) M(b, b) += e.length / 3.0;
    if (a >= 0 && b >= 0) {
      M(a, b) += e.length / 6.0;
      M(b, a) += e.length / 6.0;
    }
  }
  return M;
}

/// sup ||v||_{L^2(tag)} / ||grad v||_{L^2}: largest generalized eigenvalue.
inline double trace_l2_constant(const Mesh& mesh, const DiscreteOperatorSet& ops, Tag tag) {
  const Eigen::MatrixXd K = Eigen::MatrixXd(free_stiffness(mesh, ops));
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(boundary_mass(mesh, ops, tag), K,
                                                               Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("trace constant: eigenvalue computation failed");
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// B restricted to free columns (dense, multipliers x free dofs).
inline Eigen::MatrixXd coupling_free(const DiscreteOperatorSet& ops) {
  Eigen::MatrixXd Bf = Eigen::MatrixXd::Zero(ops.num_multipliers(), ops.num_free());
  for (int col = 0; col < ops.coupling.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(ops.coupling, col); it; ++it)
      if (const int f = ops.free_index[it.col()]; f >= 0) Bf(it.row(), f) = it.value();
  return Bf;
}

/// Generalized eigenpairs of (B K^{-1} B^T, diag |e|), ascending.
inline Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> schur_eigen(const Mesh& mesh,
                                                                              const DiscreteOperatorSet& ops) {
  const Eigen::MatrixXd Bf = coupling_free(ops);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(free_stiffness(mesh, ops));
  if (ldlt.info() != Eigen::Success) throw std::runtime_error("inf-sup: stiffness factorization failed");
  const Eigen::MatrixXd X = ldlt.solve(Eigen::MatrixXd(Bf.transpose()));
  Eigen::MatrixXd S = Bf * X;
  S = 0.5 * (S + S.transpose());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(ops.num_multipliers(), ops.num_multipliers());
  for (int e = 0; e < ops.num_multipliers(); ++e) D(e, e) = ops.gamma3[e].length;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(S, D);
  if (es.info() != Eigen::Success) throw std::runtime_error("inf-sup: eigenvalue computation failed");
  return es;
}

}  // namespace detail

/// ||ell||_{X'} = sup_v (ell, v) / ||grad v||_{L^r} for a nodal load vector
/// (entries on G1 ignored). Equals ||w||_X^{r-1} where w solves the unit
/// r-Laplacian with load ell. Returns NaN if that solve fails.
inline double x_dual_norm(const Mesh& mesh, const DiscreteOperatorSet& ops, const Vector& ell, double r,
                          const SolverConfig& cfg = {}) {
  const Vector lf = restrict_to_free(ell, ops);
  if (lf.squaredNorm() == 0.0) return 0.0;
  if (r == 2.0) {
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(detail::free_stiffness(mesh, ops));
    return std::sqrt(std::max(0.0, lf.dot(ldlt.solve(lf))));
  }
  ProblemSpec unit;
  unit.r = r;
  DiscreteOperatorSet aux = ops;
  aux.load = ell;
  const Vector zero = Vector::Zero(ops.num_multipliers());
  const NewtonResult nr = newton_inner(mesh, unit, aux, zero, cfg, initial_guess(mesh, unit, aux, zero));
  if (!nr.converged()) return std::numeric_limits<double>::quiet_NaN();
  return std::pow(x_norm(mesh, nr.u, r), r - 1.0);
}

/// c0_h alone: exact at r = 2, best of seeded ascents otherwise.
inline double trace_constant_g2(const Mesh& mesh, double r, const ConstantsOptions& opt = {}) {
  ProblemSpec unit;
  unit.r = r;
  const auto ops = assemble_operators(mesh, unit);
  if (r == 2.0) return detail::trace_l2_constant(mesh, ops, Tag::G2);
  return detail::ascend_ratio(
      mesh, r, [&](const Vector& v) { return trace_lp_norm(mesh, Tag::G2, v, r); },
      [&](const Vector& v) { return detail::trace_lp_gradient(mesh, Tag::G2, v, r); }, opt.ascent_starts, opt.seed);
}

/// sup of the G4 Gauss-L1 functional over the X unit sphere. At r = 2 the
/// Cauchy-Schwarz bound sqrt(|G4|) * (L2 trace constant), an upper bound;
/// otherwise the best of seeded ascents.
inline double trace_l1_constant_g4(const Mesh& mesh, double r, const ConstantsOptions& opt = {}) {
  ProblemSpec unit;
  unit.r = r;
  const auto ops = assemble_operators(mesh, unit);
  if (r == 2.0) return std::sqrt(mesh.tag_measure(Tag::G4)) * detail::trace_l2_constant(mesh, ops, Tag::G4);
  return detail::ascend_ratio(
      mesh, r, [&](const Vector& v) { return gauss_trace_l1(mesh, Tag::G4, v); },
      [&](const Vector& v) { return detail::gauss_l1_gradient(mesh, Tag::G4, v); }, opt.ascent_starts,
      opt.seed + 1000);
}

/// Discrete inf-sup constant inf_mu sup_v b(v, mu) / (||v||_X ||mu||_Y).
/// Exact at r = 2; for r != 2 the minimum over the r = 2 eigenvectors and
/// seeded random multipliers, each with its exact dual norm.
inline double inf_sup_constant(const Mesh& mesh, double r, const ConstantsOptions& opt = {},
                               const SolverConfig& cfg = {}) {
  ProblemSpec unit;
  unit.r = r;
  const auto ops = assemble_operators(mesh, unit);
  const auto es = detail::schur_eigen(mesh, ops);
  if (r == 2.0) return std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
  const int m = ops.num_multipliers();
  std::vector<Vector> samples;
  for (int k = 0; k < m; ++k) samples.push_back(es.eigenvectors().col(k));
  std::mt19937_64 rng(opt.seed + 2000);
  std::uniform_real_distribution<double> unit_dist(-1.0, 1.0);
  for (int s = 0; s < opt.alpha_samples; ++s) {
    Vector mu(m);
    for (int e = 0; e < m; ++e) mu[e] = unit_dist(rng);
    samples.push_back(mu);
  }
  const auto ratios = parallel_map(static_cast<int>(samples.size()), [&](int k) {
    const Vector& mu = samples[k];
    const double yn = y_norm(mesh, mu, r);
    if (yn == 0.0) return std::numeric_limits<double>::infinity();
    const double dn = x_dual_norm(mesh, ops, ops.coupling.transpose() * mu, r, cfg);
    return std::isnan(dn) ? std::numeric_limits<double>::infinity() : dn / yn;
  });
  return *std::min_element(ratios.begin(), ratios.end());
}

/// Largest sampled ||A(u) - A(v)||_{X'} / ||u - v||_X over pairs in the ball
/// of radius `radius`; half far pairs, half close pairs probing the tangent.
inline double lipschitz_on_ball(const Mesh& mesh, const ProblemSpec& spec, double radius, const ConstantsOptions& opt,
                                const SolverConfig& cfg = {}) {
  if (spec.r == 2.0) return spec.mu_star;
  if (radius <= 0.0) return 0.0;
  const auto ops = assemble_operators(mesh, spec);
  auto random_in_ball = [&](std::mt19937_64& rng, double rad) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vector v(mesh.num_nodes());
    for (int n = 0; n < mesh.num_nodes(); ++n) v[n] = unit(rng);
    v = detail::free_mask(mesh, std::move(v));
    return Vector(v * (rad / x_norm(mesh, v, spec.r)));
  };
  const auto ratios = parallel_map(opt.lipschitz_samples, [&](int k) {
    std::mt19937_64 rng(opt.seed + 3000 + static_cast<std::uint64_t>(k));
    std::uniform_real_distribution<double> radial(0.0, 1.0);
    const Vector u = random_in_ball(rng, radius * radial(rng));
    Vector v = k % 2 == 0 ? random_in_ball(rng, radius * radial(rng)) : Vector(u + random_in_ball(rng, 1e-3 * radius));
    if (k % 2 == 1 && x_norm(mesh, v, spec.r) > radius) v *= radius / x_norm(mesh, v, spec.r);
    const double dx = x_norm(mesh, u - v, spec.r);
    if (dx == 0.0) return 0.0;
    const Vector diff = apply_A(mesh, u, spec.mu_star, spec.r) - apply_A(mesh, v, spec.mu_star, spec.r);
    const double dn = x_dual_norm(mesh, ops, diff, spec.r, cfg);
    return std::isnan(dn) ? 0.0 : dn / dx;
  });
  return *std::max_element(ratios.begin(), ratios.end());
}

/// M1 = M^{1/(1-q)} (c0 ||f|| + c)^{1/(q-1)} with q = r.
inline double primal_bound(double M, double r, double c0, double f_norm, double c) {
  const double data = c0 * f_norm + c;
  if (data <= 0.0) return 0.0;
  return std::pow(M, 1.0 / (1.0 - r)) * std::pow(data, 1.0 / (r - 1.0));
}

inline ConstantsReport compute_constants(const Mesh& mesh, const ProblemSpec& spec, const ConstantsOptions& opt = {},
                                         const SolverConfig& cfg = {}) {
  validate(spec);
  ConstantsReport rep;
  rep.M = coercivity_constant(spec);
  rep.q = spec.r;
  rep.m = 0.0;
  const bool quadratic = spec.r == 2.0;
  rep.c0_exact = rep.c_upper_bound = rep.alpha_exact = rep.L_exact = quadratic;

  rep.c0_h = trace_constant_g2(mesh, spec.r, opt);
  rep.c_h = spec.g == 0.0 ? 0.0 : spec.g * spec.friction().bound() * trace_l1_constant_g4(mesh, spec.r, opt);
  rep.alpha_h = inf_sup_constant(mesh, spec.r, opt, cfg);
  rep.inf_sup_failure = !(rep.alpha_h > 1e-12);
  rep.f_dual_norm = traction_dual_norm(mesh, spec.f_coeffs, spec.r);
  rep.M1_h = primal_bound(rep.M, spec.r, rep.c0_h, rep.f_dual_norm, rep.c_h);
  rep.L_K1_h = lipschitz_on_ball(mesh, spec, rep.M1_h, opt, cfg);
  const double numerator = rep.c0_h * rep.f_dual_norm + rep.L_K1_h * rep.M1_h + rep.c_h;
  rep.lambda_bound_h = rep.inf_sup_failure ? std::numeric_limits<double>::infinity() : numerator / rep.alpha_h;
  return rep;
}

struct BoundsCheck {
  double x_norm_u = 0.0;
  double primal_bound = 0.0;
  bool primal_ok = false;
  double y_norm_lam = 0.0;
  double dual_bound = 0.0;
  bool dual_ok = false;
  bool dual_asserted = false;  // only with exact alpha_h; informational otherwise

  /// bound / value; infinite for a zero value.
  double primal_margin() const {
    return x_norm_u == 0.0 ? std::numeric_limits<double>::infinity() : primal_bound / x_norm_u;
  }
  double dual_margin() const {
    return y_norm_lam == 0.0 ? std::numeric_limits<double>::infinity() : dual_bound / y_norm_lam;
  }
  bool passed() const { return primal_ok && (!dual_asserted || dual_ok); }
};

inline BoundsCheck verify_bounds(const Mesh& mesh, const ProblemSpec& spec, const DiscreteState& state,
                                 const ConstantsReport& report) {
  BoundsCheck out;
  out.x_norm_u = x_norm(mesh, state.u, spec.r);
  out.primal_bound = report.M1_h;
  out.primal_ok = out.x_norm_u <= report.M1_h * (1.0 + 1e-8);
  out.y_norm_lam = y_norm(mesh, state.lam, spec.r);
  out.dual_bound = report.lambda_bound_h;
  out.dual_ok = out.y_norm_lam <= report.lambda_bound_h * (1.0 + 1e-8);
  out.dual_asserted = report.alpha_exact && report.L_exact;
  return out;
}

// -------------------------------------------------------- data convergence

/// (f_n, theta_n, g_n) = limit + amplitude / n^power, or a constant sequence
/// for components given as `*_fixed`.
struct PerturbationSchedule {
  TractionCoeffs f_amp{0.0, 0.0};
  double theta_amp = 0.0;
  double g_amp = 0.0;
  double power = 1.0;
  std::optional<TractionCoeffs> f_fixed;
  std::optional<double> theta_fixed;
  std::optional<double> g_fixed;

  ProblemSpec at(const ProblemSpec& limit, int n) const {
    const double w = std::pow(static_cast<double>(n), -power);
    ProblemSpec s = limit;
    if (f_fixed) {
      s.f_coeffs = *f_fixed;
    } else {
      s.f_coeffs = {limit.f_coeffs[0] + f_amp[0] * w, limit.f_coeffs[1] + f_amp[1] * w};
    }
    s.theta = theta_fixed ? *theta_fixed : limit.theta + theta_amp * w;
    s.g = g_fixed ? *g_fixed : limit.g + g_amp * w;
    return s;
  }

  bool is_identity() const {
    return !f_fixed && !theta_fixed && !g_fixed && f_amp[0] == 0.0 && f_amp[1] == 0.0 && theta_amp == 0.0 &&
           g_amp == 0.0;
  }
};

/// Violations of the study contract: the data must converge to the limit.
inline std::vector<Violation> check_schedule(const ProblemSpec& limit, const PerturbationSchedule& sch,
                                             const std::vector<int>& ns) {
  std::vector<Violation> out;
  if (ns.size() < 3) out.push_back({"task.n", "at least 3 perturbation levels required"});
  for (std::size_t k = 0; k < ns.size(); ++k) {
    if (ns[k] < 1) out.push_back({"task.n", "levels must be positive integers"});
    if (k > 0 && ns[k] <= ns[k - 1]) out.push_back({"task.n", "levels must be strictly increasing"});
  }
  if (!sch.is_identity() && !(sch.power > 0.0))
    out.push_back({"task.power", "power > 0 required for the perturbation to vanish"});
  if (sch.f_fixed && *sch.f_fixed != limit.f_coeffs)
    out.push_back({"task.f_fixed", "constant f_n differs from f, the data sequence does not converge"});
  if (sch.theta_fixed && *sch.theta_fixed != limit.theta)
    out.push_back({"task.theta_fixed", "constant theta_n differs from theta, the data sequence does not converge"});
  if (sch.g_fixed && *sch.g_fixed != limit.g)
    out.push_back({"task.g_fixed", "constant g_n differs from g, the data sequence does not converge"});
  for (int n : ns) {
    if (n < 1) continue;
    for (const auto& v : check(sch.at(limit, n)))
      out.push_back({v.field, "at n = " + std::to_string(n) + ": " + v.message});
  }
  return out;
}

inline constexpr int kNumProbes = 5;

/// Probe fields s^k (1 + t) / 2, k = 1..5, with s the normalized distance
/// from the G1 side and t the normalized coordinate along it.
inline std::array<Vector, kNumProbes> probe_fields(const Mesh& mesh) {
  std::array<Vector, kNumProbes> out;
  const Side side = mesh.partition.side_of(Tag::G1).value_or(Side::Left);
  for (int k = 0; k < kNumProbes; ++k) {
    out[k].resize(mesh.num_nodes());
    for (int n = 0; n < mesh.num_nodes(); ++n) {
      const double x = mesh.nodes[n].x / mesh.width, y = mesh.nodes[n].y / mesh.height;
      double s = 0.0, t = 0.0;
      switch (side) {
        case Side::Left: s = x, t = y; break;
        case Side::Right: s = 1.0 - x, t = y; break;
        case Side::Bottom: s = y, t = x; break;
        case Side::Top: s = 1.0 - y, t = x; break;
      }
      out[k][n] = std::pow(s, k + 1) * 0.5 * (1.0 + t);
    }
  }
  return out;
}

struct ConvergenceRow {
  int n = 0;
  ProblemSpec data;
  double x_gap = 0.0;  // x_norm(u_n - u)
  double y_gap = 0.0;  // y_norm(lam_n - lam), reported only
  std::array<double, kNumProbes> probe_gaps{};  // |b(v_i, lam_n - lam)|
  SolveDiagnostics diagnostics;
};

struct ConvergenceTable {
  ProblemSpec limit;
  DiscreteState limit_state;
  SolveDiagnostics limit_diagnostics;
  std::vector<ConvergenceRow> rows;

  bool all_converged() const {
    if (!limit_diagnostics.converged) return false;
    return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.diagnostics.converged; });
  }

  /// Gaps at the last level do not exceed those at the level closest to n/4.
  bool monotone_trend() const {
    if (rows.size() < 2) return true;
    const ConvergenceRow& last = rows.back();
    const double quarter = last.n / 4.0;
    const ConvergenceRow* ref = &rows.front();
    for (const auto& r : rows)
      if (std::abs(r.n - quarter) < std::abs(ref->n - quarter)) ref = &r;
    if (last.x_gap > ref->x_gap) return false;
    for (int k = 0; k < kNumProbes; ++k)
      if (last.probe_gaps[k] > ref->probe_gaps[k]) return false;
    return true;
  }
};

/// Levels 1..N.
inline std::vector<int> levels_up_to(int N) {
  std::vector<int> ns(std::max(N, 0));
  for (int k = 0; k < N; ++k) ns[k] = k + 1;
  return ns;
}

/// Solves the limit instance and every perturbed instance; throws
/// std::invalid_argument when the schedule violates the contract.
inline ConvergenceTable convergence_study(const Mesh& mesh, const ProblemSpec& limit,
                                          const PerturbationSchedule& schedule, const std::vector<int>& ns,
                                          const SolverConfig& cfg = {}) {
  validate(limit);
  if (auto v = check_schedule(limit, schedule, ns); !v.empty())
    throw std::invalid_argument(v.front().field + ": " + v.front().message);
  ConvergenceTable table;
  table.limit = limit;
  const auto ref = uzawa_solve(mesh, limit, cfg);
  table.limit_state = ref.state;
  table.limit_diagnostics = ref.diagnostics;

  const auto ops = assemble_operators(mesh, limit);
  std::array<Vector, kNumProbes> probe_traces;
  const auto probes = probe_fields(mesh);
  for (int k = 0; k < kNumProbes; ++k) probe_traces[k] = ops.coupling * probes[k];

  table.rows = parallel_map(static_cast<int>(ns.size()), [&](int i) {
    ConvergenceRow row;
    row.n = ns[i];
    row.data = schedule.at(limit, ns[i]);
    const auto sol = uzawa_solve(mesh, row.data, cfg);
    row.diagnostics = sol.diagnostics;
    row.x_gap = x_norm(mesh, sol.state.u - ref.state.u, limit.r);
    const Vector dlam = sol.state.lam - ref.state.lam;
    row.y_gap = y_norm(mesh, dlam, limit.r);
    for (int k = 0; k < kNumProbes; ++k) row.probe_gaps[k] = std::abs(dlam.dot(probe_traces[k]));
    return row;
  });
  return table;
}

inline ConvergenceTable convergence_study(const Mesh& mesh, const ProblemSpec& limit,
                                          const PerturbationSchedule& schedule, int N, const SolverConfig& cfg = {}) {
  return convergence_study(mesh, limit, schedule, levels_up_to(N), cfg);
}

// ------------------------------------------------------------ optimization

enum class CostKind {
  // p = (c0, c1, theta, g); alpha ||u - u_d||_X^r + beta ||lam - lam_d||_Y^{r'}
  //                         + delta (||f||_{Z'}^2 + theta^2 + g^2)
  StateMultiplier,
  // p = (c0, c1); alpha ||u - u_d||_{L^r(G2)}^2 + delta ||f||_{Z'}^2
  TraceG2,
  // p = g; ||u - u_d||_{L^{r'}(G3)}
  TraceG3,
};

inline std::string_view to_string(CostKind k) {
  switch (k) {
    case CostKind::StateMultiplier: return "state_multiplier";
    case CostKind::TraceG2: return "trace_g2";
    case CostKind::TraceG3: return "trace_g3";
  }
  return "?";
}

inline std::optional<CostKind> parse_cost_kind(std::string_view s) {
  for (CostKind k : {CostKind::StateMultiplier, CostKind::TraceG2, CostKind::TraceG3})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline int parameter_count(CostKind k) {
  switch (k) {
    case CostKind::StateMultiplier: return 4;
    case CostKind::TraceG2: return 2;
    case CostKind::TraceG3: return 1;
  }
  return 0;
}

struct CostSpec {
  CostKind kind = CostKind::TraceG3;
  double alpha = 1.0;
  double beta = 1.0;
  double delta = 1.0;
  Vector u_target;    // nodal; empty means zero
  Vector lam_target;  // per G3 edge; empty means zero
};

/// Admissible box U; infinite bounds allowed except for the scalar search.
struct ParameterBox {
  std::vector<double> lower;
  std::vector<double> upper;

  std::vector<double> clip(std::vector<double> p) const {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], lower[i], upper[i]);
    return p;
  }
};

/// U for the three cost kinds: f coefficients in [-f_max, f_max], theta and
/// g in [0, bound_max]; for TraceG3, U = [0, g_tilde].
inline ParameterBox default_box(CostKind kind, double f_max = 5.0, double bound_max = 5.0) {
  switch (kind) {
    case CostKind::StateMultiplier: return {{-f_max, -f_max, 0.0, 0.0}, {f_max, f_max, bound_max, bound_max}};
    case CostKind::TraceG2: return {{-f_max, -f_max}, {f_max, f_max}};
    case CostKind::TraceG3: return {{0.0}, {bound_max}};
  }
  return {};
}

inline ProblemSpec apply_parameters(const ProblemSpec& base, CostKind kind, const std::vector<double>& p) {
  if (static_cast<int>(p.size()) != parameter_count(kind))
    throw std::invalid_argument("apply_parameters: wrong number of parameters");
  ProblemSpec s = base;
  switch (kind) {
    case CostKind::StateMultiplier:
      s.f_coeffs = {p.at(0), p.at(1)};
      s.theta = p.at(2);
      s.g = p.at(3);
      break;
    case CostKind::TraceG2: s.f_coeffs = {p.at(0), p.at(1)}; break;
    case CostKind::TraceG3: s.g = p.at(0); break;
  }
  return s;
}

inline double evaluate_cost(const Mesh& mesh, const ProblemSpec& spec, const CostSpec& cost,
                            const DiscreteState& state) {
  const Vector du = cost.u_target.size() == 0 ? state.u : Vector(state.u - cost.u_target);
  switch (cost.kind) {
    case CostKind::StateMultiplier: {
      const Vector dl = cost.lam_target.size() == 0 ? state.lam : Vector(state.lam - cost.lam_target);
      const double fn = traction_dual_norm(mesh, spec.f_coeffs, spec.r);
      double value = cost.delta * (fn * fn + spec.theta * spec.theta + spec.g * spec.g);
      if (cost.alpha != 0.0) value += cost.alpha * std::pow(x_norm(mesh, du, spec.r), spec.r);
      if (cost.beta != 0.0) value += cost.beta * std::pow(y_norm(mesh, dl, spec.r), spec.r_conj());
      return value;
    }
    case CostKind::TraceG2: {
      const double fn = traction_dual_norm(mesh, spec.f_coeffs, spec.r);
      const double tn = trace_lp_norm(mesh, Tag::G2, du, spec.r);
      return cost.alpha * tn * tn + cost.delta * fn * fn;
    }
    case CostKind::TraceG3: return trace_lp_norm(mesh, Tag::G3, du, spec.r_conj());
  }
  return std::numeric_limits<double>::infinity();
}

/// Targets taken from the solution at p_ref, so the cost vanishes there.
inline CostSpec self_target(const Mesh& mesh, const ProblemSpec& base, CostSpec cost, const std::vector<double>& p_ref,
                            const SolverConfig& cfg = {}) {
  const auto sol = uzawa_solve(mesh, apply_parameters(base, cost.kind, p_ref), cfg);
  if (!sol.diagnostics.converged) throw std::runtime_error("self_target: reference solve did not converge");
  cost.u_target = sol.state.u;
  cost.lam_target = sol.state.lam;
  return cost;
}

struct OptimizerOptions {
  int budget = 0;    // forward solves; 0 selects 60 (scalar) or 300
  int restarts = 3;  // Nelder-Mead runs at most
  std::uint64_t seed = 0;
  std::vector<double> x0;  // start; empty selects the box centre (finite bounds) or 0
  double xtol = 1e-12;     // relative to the box width (scalar) or absolute simplex size
};

struct Evaluation {
  std::vector<double> p;
  double cost = 0.0;
  SolveStatus status = SolveStatus::Converged;
};

struct OptimizationResult {
  std::vector<double> p_star;
  double cost_star = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  std::vector<Evaluation> trace;
  std::vector<std::array<double, 2>> brackets;  // golden-section intervals
};

namespace detail {

class CostEvaluator {
 public:
  CostEvaluator(const Mesh& mesh, const ProblemSpec& base, const CostSpec& cost, const SolverConfig& cfg,
                OptimizationResult& result)
      : mesh_(mesh), base_(base), cost_(cost), cfg_(cfg), result_(result) {}

  double operator()(const std::vector<double>& p) {
    Evaluation ev{p, std::numeric_limits<double>::infinity(), SolveStatus::Converged};
    const ProblemSpec spec = apply_parameters(base_, cost_.kind, p);
    if (check(spec).empty()) {
      const auto sol = uzawa_solve(mesh_, spec, cfg_);
      ev.status = sol.diagnostics.status;
      if (sol.diagnostics.converged) ev.cost = evaluate_cost(mesh_, spec, cost_, sol.state);
    } else {
      ev.status = SolveStatus::IterationLimit;
    }
    result_.trace.push_back(ev);
    ++result_.evaluations;
    if (ev.cost < result_.cost_star) {
      result_.cost_star = ev.cost;
      result_.p_star = p;
    }
    return ev.cost;
  }

 private:
  const Mesh& mesh_;
  const ProblemSpec& base_;
  const CostSpec& cost_;
  const SolverConfig& cfg_;
  OptimizationResult& result_;
};

inline void golden_section(CostEvaluator& eval, double a, double b, int budget, double xtol,
                           OptimizationResult& result) {
  constexpr double kInvPhi = 0.61803398874989484820;
  const double width = b - a;
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = eval({c}), fd = eval({d});
  result.brackets.push_back({a, b});
  while (result.evaluations < budget && b - a > xtol * width) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval({c});
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval({d});
    }
    result.brackets.push_back({a, b});
  }
}

inline void nelder_mead(CostEvaluator& eval, const ParameterBox& box, std::vector<double> x0,
                        std::vector<double> step, int budget_end, double xtol, OptimizationResult& result) {
  const int n = static_cast<int>(x0.size());
  struct Vertex {
    std::vector<double> x;
    double f;
  };
  auto at = [&](std::vector<double> x) {
    x = box.clip(std::move(x));
    const double f = eval(x);
    return Vertex{std::move(x), f};
  };
  auto affine = [](const std::vector<double>& a, const std::vector<double>& b, double t) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + t * (b[i] - a[i]);
    return out;
  };

  std::vector<Vertex> simplex;
  simplex.push_back(at(x0));
  for (int i = 0; i < n && result.evaluations < budget_end; ++i) {
    std::vector<double> x = x0;
    x[i] += step[i];
    if (x[i] > box.upper[i] || x[i] < box.lower[i]) x[i] = x0[i] - step[i];
    simplex.push_back(at(x));
  }
  if (static_cast<int>(simplex.size()) < n + 1) return;

  auto by_cost = [](const Vertex& a, const Vertex& b) { return a.f < b.f; };
  while (result.evaluations < budget_end) {
    std::sort(simplex.begin(), simplex.end(), by_cost);
    double size = 0.0;
    for (int i = 1; i <= n; ++i)
      for (int j = 0; j < n; ++j) size = std::max(size, std::abs(simplex[i].x[j] - simplex[0].x[j]));
    if (size <= xtol) return;

    std::vector<double> centroid(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) centroid[j] += simplex[i].x[j] / n;
    Vertex& worst = simplex[n];
    const Vertex refl = at(affine(centroid, worst.x, -1.0));
    if (refl.f < simplex[0].f) {
      if (result.evaluations >= budget_end) {
        worst = refl;
        return;
      }
      const Vertex expd = at(affine(centroid, worst.x, -2.0));
      worst = expd.f < refl.f ? expd : refl;
    } else if (refl.f < simplex[n - 1].f) {
      worst = refl;
    } else {
      if (result.evaluations >= budget_end) return;
      const bool outside = refl.f < worst.f;
      const Vertex con = at(affine(centroid, outside ? refl.x : worst.x, 0.5));
      if (con.f < std::min(refl.f, worst.f)) {
        worst = con;
      } else {
        for (int i = 1; i <= n && result.evaluations < budget_end; ++i)
          simplex[i] = at(affine(simplex[0].x, simplex[i].x, 0.5));
      }
    }
  }
}

}  // namespace detail

/// Minimizes the cost over the box. Scalar problems use golden-section
/// search; vector problems use Nelder-Mead with box clipping, the first run
/// from x0 and, once a run's simplex has collapsed below xtol, a restart from
/// the best point with a fresh seeded simplex. Failed forward solves count
/// against the budget with cost +inf.
inline OptimizationResult optimize(const Mesh& mesh, const ProblemSpec& base, const CostSpec& cost,
                                   const ParameterBox& box, const OptimizerOptions& opt = {},
                                   const SolverConfig& cfg = {}) {
  const int n = parameter_count(cost.kind);
  if (static_cast<int>(box.lower.size()) != n || static_cast<int>(box.upper.size()) != n)
    throw std::invalid_argument("optimize: box dimension does not match the parameter count");
  for (int i = 0; i < n; ++i)
    if (!(box.lower[i] <= box.upper[i])) throw std::invalid_argument("optimize: empty admissible set");

  OptimizationResult result;
  detail::CostEvaluator eval(mesh, base, cost, cfg, result);
  if (n == 1) {
    if (!std::isfinite(box.lower[0]) || !std::isfinite(box.upper[0]) || !(box.upper[0] > box.lower[0]))
      throw std::invalid_argument("optimize: scalar search needs a bounded interval of positive length");
    const int budget = opt.budget > 0 ? opt.budget : 60;
    detail::golden_section(eval, box.lower[0], box.upper[0], budget, opt.xtol, result);
    return result;
  }

  const int budget = opt.budget > 0 ? opt.budget : 300;
  std::vector<double> x0 = opt.x0;
  if (x0.empty()) {
    x0.resize(n);
    for (int i = 0; i < n; ++i) {
      const bool finite = std::isfinite(box.lower[i]) && std::isfinite(box.upper[i]);
      x0[i] = finite ? 0.5 * (box.lower[i] + box.upper[i]) : std::clamp(0.0, box.lower[i], box.upper[i]);
    }
  }
  if (static_cast<int>(x0.size()) != n) throw std::invalid_argument("optimize: x0 has the wrong dimension");
  x0 = box.clip(x0);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  const int runs = std::max(1, opt.restarts);
  for (int run = 0; run < runs && result.evaluations < budget; ++run) {
    const std::vector<double> start = run == 0 ? x0 : result.p_star;
    std::vector<double> step(n);
    for (int i = 0; i < n; ++i) {
      const double width = box.upper[i] - box.lower[i];
      step[i] = (std::isfinite(width) ? 0.25 * width : 1.0) * jitter(rng);
    }
    detail::nelder_mead(eval, box, start, step, budget, opt.xtol, result);
  }
  return result;
}

}  // namespace mixedvi

#endif  // MIXEDVI_ANALYSIS_HPP
