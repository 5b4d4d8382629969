#ifndef MIXEDVI_ASSEMBLY_HPP
#define MIXEDVI_ASSEMBLY_HPP

// Discrete operators of the antiplane contact problem on P1 elements:
//
//   (A u, v)   = mu* \int_Omega (|grad u|^2 + eps^2)^{(r-2)/2} grad u . grad v
//   J(u, v)    = g \int_G4 j(u) v
//   b(v, lam)  = \int_G3 lam v          (lam piecewise constant per G3 edge)
//   (F, v)     = \int_G2 f v
//
// Bulk integrals are exact per triangle (constant gradients). Boundary terms
// use 2-point Gauss on every edge, which is exact for the P1 x P1 load and
// coupling integrands.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mixedvi/mesh.hpp"
#include "mixedvi/problem.hpp"

namespace mixedvi {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Area and constant basis gradients of one triangle.
struct ElementGeometry {
  double area;
  std::array<double, 3> dx;
  std::array<double, 3> dy;
};

inline ElementGeometry element_geometry(const Mesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  const double twice_area = 2.0 * mesh.signed_area(t);
  ElementGeometry geo{0.5 * twice_area, {}, {}};
  for (int k = 0; k < 3; ++k) {
    const Point& b = mesh.nodes[tri[(k + 1) % 3]];
    const Point& c = mesh.nodes[tri[(k + 2) % 3]];
    geo.dx[k] = (b.y - c.y) / twice_area;
    geo.dy[k] = (c.x - b.x) / twice_area;
  }
  return geo;
}

inline std::array<double, 2> element_gradient(const Mesh& mesh, const ElementGeometry& geo, int t,
                                              const Vector& u) {
  const auto& tri = mesh.triangles[t];
  double gx = 0.0, gy = 0.0;
  for (int k = 0; k < 3; ++k) {
    gx += u[tri[k]] * geo.dx[k];
    gy += u[tri[k]] * geo.dy[k];
  }
  return {gx, gy};
}

namespace detail {

inline void check_nodal(const Mesh& mesh, const Vector& u, const char* who) {
  if (u.size() != mesh.num_nodes())
    throw std::invalid_argument(std::string(who) + ": nodal array has " + std::to_string(u.size()) +
                                " entries, mesh has " + std::to_string(mesh.num_nodes()) + " nodes");
}

// 2-point Gauss rule on [0, 1].
inline constexpr double kGaussLo = 0.21132486540518711775;  // (1 - 1/sqrt(3)) / 2
inline constexpr double kGaussHi = 0.78867513459481288225;
inline constexpr std::array<double, 2> kGaussPts{kGaussLo, kGaussHi};

}  // namespace detail

/// Residual of the (regularized) r-Laplacian, one entry per node.
inline Vector apply_A(const Mesh& mesh, const Vector& u, double mu_star, double r, double eps = 0.0) {
  detail::check_nodal(mesh, u, "apply_A");
  if (eps < 0.0) throw std::invalid_argument("apply_A: eps must be >= 0");
  Vector res = Vector::Zero(mesh.num_nodes());
  const double half_exp = 0.5 * (r - 2.0);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto geo = element_geometry(mesh, t);
    const auto [gx, gy] = element_gradient(mesh, geo, t, u);
    const double coef = mu_star * std::pow(gx * gx + gy * gy + eps * eps, half_exp) * geo.area;
    const auto& tri = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) res[tri[k]] += coef * (gx * geo.dx[k] + gy * geo.dy[k]);
  }
  return res;
}

/// Jacobian of apply_A at u (same eps). Symmetric positive semidefinite.
inline SparseMatrix tangent_A(const Mesh& mesh, const Vector& u, double mu_star, double r, double eps) {
  detail::check_nodal(mesh, u, "tangent_A");
  if (eps < 0.0) throw std::invalid_argument("tangent_A: eps must be >= 0");
  if (eps == 0.0 && r > 2.0)
    throw std::invalid_argument("tangent_A: eps = 0 is not allowed for r > 2 (derivative unbounded at grad u = 0)");
  const double half_exp = 0.5 * (r - 2.0);
  std::vector<Triplet> trip;
  trip.reserve(9 * static_cast<std::size_t>(mesh.num_triangles()));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto geo = element_geometry(mesh, t);
    const auto [gx, gy] = element_gradient(mesh, geo, t, u);
    const double q = gx * gx + gy * gy + eps * eps;
    // D = a I + b g g^T
    const double a = mu_star * std::pow(q, half_exp);
    const double b = (r == 2.0) ? 0.0 : mu_star * 2.0 * half_exp * std::pow(q, half_exp - 1.0);
    const auto& tri = mesh.triangles[t];
    for (int i = 0; i < 3; ++i) {
      const double gi = gx * geo.dx[i] + gy * geo.dy[i];
      for (int k = 0; k < 3; ++k) {
        const double gk = gx * geo.dx[k] + gy * geo.dy[k];
        const double dot = geo.dx[i] * geo.dx[k] + geo.dy[i] * geo.dy[k];
        trip.emplace_back(tri[i], tri[k], geo.area * (a * dot + b * gi * gk));
      }
    }
  }
  SparseMatrix K(mesh.num_nodes(), mesh.num_nodes());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

/// Laplacian stiffness \int grad phi_i . grad phi_k (unit coefficient).
inline SparseMatrix stiffness_matrix(const Mesh& mesh) {
  return tangent_A(mesh, Vector::Zero(mesh.num_nodes()), 1.0, 2.0, 0.0);
}

/// G_i = g \int_G4 j(u) phi_i, 2-point Gauss per edge.
inline Vector friction_residual_g4(const Mesh& mesh, const Vector& u, double g, const FrictionLaw& law) {
  detail::check_nodal(mesh, u, "friction_residual_g4");
  Vector res = Vector::Zero(mesh.num_nodes());
  if (g == 0.0) return res;
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != Tag::G4) continue;
    const double u0 = u[e.nodes[0]], u1 = u[e.nodes[1]];
    for (double s : detail::kGaussPts) {
      const double w = 0.5 * e.length * g * law.value((1.0 - s) * u0 + s * u1);
      res[e.nodes[0]] += w * (1.0 - s);
      res[e.nodes[1]] += w * s;
    }
  }
  return res;
}

/// Jacobian of friction_residual_g4; supported on G4 trace nodes.
inline SparseMatrix friction_tangent_g4(const Mesh& mesh, const Vector& u, double g, const FrictionLaw& law) {
  detail::check_nodal(mesh, u, "friction_tangent_g4");
  std::vector<Triplet> trip;
  if (g != 0.0) {
    for (const auto& e : mesh.boundary_edges) {
      if (e.tag != Tag::G4) continue;
      const double u0 = u[e.nodes[0]], u1 = u[e.nodes[1]];
      for (double s : detail::kGaussPts) {
        const double w = 0.5 * e.length * g * law.derivative((1.0 - s) * u0 + s * u1);
        const std::array<double, 2> phi{1.0 - s, s};
        for (int i = 0; i < 2; ++i)
          for (int k = 0; k < 2; ++k) trip.emplace_back(e.nodes[i], e.nodes[k], w * phi[i] * phi[k]);
      }
    }
  }
  SparseMatrix K(mesh.num_nodes(), mesh.num_nodes());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

/// F_i = \int_G2 f phi_i with f(s) = c0 + c1 s along the G2 side.
inline Vector load_vector(const Mesh& mesh, const TractionCoeffs& f) {
  Vector res = Vector::Zero(mesh.num_nodes());
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != Tag::G2) continue;
    const double s0 = mesh.arc_position(e.side, mesh.nodes[e.nodes[0]]);
    const double s1 = mesh.arc_position(e.side, mesh.nodes[e.nodes[1]]);
    for (double s : detail::kGaussPts) {
      const double w = 0.5 * e.length * (f[0] + f[1] * ((1.0 - s) * s0 + s * s1));
      res[e.nodes[0]] += w * (1.0 - s);
      res[e.nodes[1]] += w * s;
    }
  }
  return res;
}

/// Coupling matrix B with B(e, i) = \int_e phi_i over the G3 edges, rows in
/// trace_dofs(mesh, G3) order. b(v, lam) = lam^T B v.
inline SparseMatrix coupling_matrix(const Mesh& mesh) {
  const auto g3 = trace_dofs(mesh, Tag::G3);
  std::vector<Triplet> trip;
  for (int row = 0; row < static_cast<int>(g3.size()); ++row)
    for (int node : g3[row].nodes) trip.emplace_back(row, node, 0.5 * g3[row].length);
  SparseMatrix B(static_cast<int>(g3.size()), mesh.num_nodes());
  B.setFromTriplets(trip.begin(), trip.end());
  return B;
}

/// Everything the solvers need that does not depend on u.
struct DiscreteOperatorSet {
  SparseMatrix coupling;            // B
  Vector load;                      // F
  std::vector<TraceEdge> gamma3;    // multiplier edges, row order of B
  std::vector<TraceEdge> gamma4;    // G4 quadrature edges
  std::vector<int> free_dofs;       // nodes not on G1
  std::vector<int> free_index;      // node -> position in free_dofs, -1 on G1

  int num_multipliers() const { return static_cast<int>(gamma3.size()); }
  int num_free() const { return static_cast<int>(free_dofs.size()); }
};

inline DiscreteOperatorSet assemble_operators(const Mesh& mesh, const ProblemSpec& spec) {
  DiscreteOperatorSet ops;
  ops.coupling = coupling_matrix(mesh);
  ops.load = load_vector(mesh, spec.f_coeffs);
  ops.gamma3 = trace_dofs(mesh, Tag::G3);
  ops.gamma4 = trace_dofs(mesh, Tag::G4);
  ops.free_dofs = mesh.free_nodes();
  ops.free_index.assign(mesh.num_nodes(), -1);
  for (int k = 0; k < ops.num_free(); ++k) ops.free_index[ops.free_dofs[k]] = k;
  return ops;
}

/// Rows/columns of `K` on free dofs.
inline SparseMatrix restrict_to_free(const SparseMatrix& K, const DiscreteOperatorSet& ops) {
  std::vector<Triplet> trip;
  trip.reserve(K.nonZeros());
  for (int col = 0; col < K.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(K, col); it; ++it) {
      const int i = ops.free_index[it.row()], k = ops.free_index[it.col()];
      if (i >= 0 && k >= 0) trip.emplace_back(i, k, it.value());
    }
  SparseMatrix R(ops.num_free(), ops.num_free());
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

inline Vector restrict_to_free(const Vector& v, const DiscreteOperatorSet& ops) {
  Vector out(ops.num_free());
  for (int k = 0; k < ops.num_free(); ++k) out[k] = v[ops.free_dofs[k]];
  return out;
}

/// Scatters free-dof values into a nodal array that vanishes on G1.
inline Vector extend_from_free(const Vector& v, const DiscreteOperatorSet& ops, int num_nodes) {
  Vector out = Vector::Zero(num_nodes);
  for (int k = 0; k < ops.num_free(); ++k) out[ops.free_dofs[k]] = v[k];
  return out;
}

/// ||u||_X = ||grad u||_{L^r}.
inline double x_norm(const Mesh& mesh, const Vector& u, double r) {
  detail::check_nodal(mesh, u, "x_norm");
  double acc = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto geo = element_geometry(mesh, t);
    const auto [gx, gy] = element_gradient(mesh, geo, t, u);
    acc += geo.area * std::pow(std::hypot(gx, gy), r);
  }
  return std::pow(acc, 1.0 / r);
}

/// ||lam||_Y = ||lam||_{L^{r'}(G3)}, lam piecewise constant in G3 trace order.
inline double y_norm(const Mesh& mesh, const Vector& lam, double r) {
  const auto g3 = trace_dofs(mesh, Tag::G3);
  if (lam.size() != static_cast<Eigen::Index>(g3.size()))
    throw std::invalid_argument("y_norm: multiplier size does not match the G3 edge count");
  const double rc = r / (r - 1.0);
  double acc = 0.0;
  for (int e = 0; e < static_cast<int>(g3.size()); ++e) acc += g3[e].length * std::pow(std::abs(lam[e]), rc);
  return std::pow(acc, 1.0 / rc);
}

/// Exact \int_0^L |a + (b - a) s / L|^p ds for p >= 1.
inline double edge_power_integral(double a, double b, double length, double p) {
  const double span = b - a;
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  if (std::abs(span) < 0.25 * scale) {
    // No sign change and a nearly constant integrand: the primitive would
    // cancel, 8-point Gauss-Legendre is accurate to rounding here.
    static constexpr std::array<double, 4> x{0.18343464249564980494, 0.52553240991632898582,
                                             0.79666647741362673959, 0.96028985649753623168};
    static constexpr std::array<double, 4> w{0.36268378337836198297, 0.31370664587788728734,
                                             0.22238103445337447054, 0.10122853629037625915};
    const double mid = 0.5 * (a + b), half = 0.5 * span;
    double acc = 0.0;
    for (int k = 0; k < 4; ++k)
      acc += w[k] * (std::pow(std::abs(mid - half * x[k]), p) + std::pow(std::abs(mid + half * x[k]), p));
    return 0.5 * length * acc;
  }
  const auto prim = [p](double v) { return v * std::pow(std::abs(v), p) / (p + 1.0); };
  return length * (prim(b) - prim(a)) / span;
}

/// ||v||_{L^p(tag)} of the P1 trace of a nodal field, exact.
inline double trace_lp_norm(const Mesh& mesh, Tag tag, const Vector& v, double p) {
  double acc = 0.0;
  for (const auto& e : mesh.boundary_edges)
    if (e.tag == tag) acc += edge_power_integral(v[e.nodes[0]], v[e.nodes[1]], e.length, p);
  return std::pow(acc, 1.0 / p);
}

/// 2-point Gauss approximation of \int_tag |v|; the quadrature the friction
/// term on G4 is evaluated with, so |J_h(u, v)| <= g M_j * this.
inline double gauss_trace_l1(const Mesh& mesh, Tag tag, const Vector& v) {
  double acc = 0.0;
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != tag) continue;
    for (double s : detail::kGaussPts)
      acc += 0.5 * e.length * std::abs((1.0 - s) * v[e.nodes[0]] + s * v[e.nodes[1]]);
  }
  return acc;
}

/// ||f||_{Z'} = ||f||_{L^{r'}(G2)}, exact for the linear traction.
inline double traction_dual_norm(const Mesh& mesh, const TractionCoeffs& f, double r) {
  const double rc = r / (r - 1.0);
  double acc = 0.0;
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != Tag::G2) continue;
    const double s0 = mesh.arc_position(e.side, mesh.nodes[e.nodes[0]]);
    const double s1 = mesh.arc_position(e.side, mesh.nodes[e.nodes[1]]);
    acc += edge_power_integral(f[0] + f[1] * s0, f[0] + f[1] * s1, e.length, rc);
  }
  return std::pow(acc, 1.0 / rc);
}

struct EnergyValue {
  double total = 0.0;
  double bulk = 0.0;    // (mu*/r) \int |grad u|^r
  double gamma3 = 0.0;  // theta * sum_e |\int_e u|
  double gamma4 = 0.0;  // g \int_G4 Jhat(u)
  double load = 0.0;    // -\int_G2 f u
};

/// Convex energy whose minimizer over u (u = 0 on G1) is the discrete
/// solution. The G3 term is the support function of the discrete multiplier
/// box {|lam_e| <= theta}, i.e. theta * sum_e |(B u)_e|, which equals
/// theta * \int_G3 |u| whenever u keeps its sign on each G3 edge.
inline EnergyValue oracle_energy(const Mesh& mesh, const Vector& u, const ProblemSpec& spec) {
  detail::check_nodal(mesh, u, "oracle_energy");
  EnergyValue ev;
  double bulk = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto geo = element_geometry(mesh, t);
    const auto [gx, gy] = element_gradient(mesh, geo, t, u);
    bulk += geo.area * std::pow(std::hypot(gx, gy), spec.r);
  }
  ev.bulk = spec.mu_star / spec.r * bulk;
  ev.gamma3 = spec.theta * (coupling_matrix(mesh) * u).cwiseAbs().sum();
  const FrictionLaw law = spec.friction();
  double g4 = 0.0;
  for (const auto& e : mesh.boundary_edges) {
    if (e.tag != Tag::G4) continue;
    for (double s : detail::kGaussPts)
      g4 += 0.5 * e.length * law.potential((1.0 - s) * u[e.nodes[0]] + s * u[e.nodes[1]]);
  }
  ev.gamma4 = spec.g * g4;
  ev.load = -load_vector(mesh, spec.f_coeffs).dot(u);
  ev.total = ev.bulk + ev.gamma3 + ev.gamma4 + ev.load;
  return ev;
}

}  // namespace mixedvi

#endif  // MIXEDVI_ASSEMBLY_HPP
