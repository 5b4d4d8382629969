#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "mixedvi/assembly.hpp"
#include "test_support.hpp"

namespace mixedvi {
namespace {

using testing::interpolate;
using testing::random_field;

const Mesh& unit_mesh(int n) {
  static std::map<int, Mesh> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_rect_mesh(n, n, 1.0, 1.0)).first;
  return it->second;
}

TEST(ApplyA, ZeroField) {
  const Mesh& m = unit_mesh(4);
  EXPECT_EQ(apply_A(m, Vector::Zero(m.num_nodes()), 1.0, 3.0).norm(), 0.0);
}

TEST(ApplyA, LinearFieldPairing) {
  const Mesh& m = unit_mesh(4);
  const Vector u = interpolate(m, [](double x, double) { return x; });
  EXPECT_NEAR(apply_A(m, u, 1.0, 2.0).dot(u), 1.0, 1e-13);

  // mu* \int |grad u|^r with grad u = (1, 0), cross-checked by midpoint quadrature.
  const double oracle = 2.0 * testing::midpoint_integral(1.0, 1.0, 50, [](double, double) {
                          return std::pow(std::hypot(1.0, 0.0), 3.0);
                        });
  EXPECT_NEAR(oracle, 2.0, 1e-12);
  EXPECT_NEAR(apply_A(m, u, 2.0, 3.0).dot(u), oracle, 1e-12);
}

TEST(ApplyA, DimensionMismatch) {
  const Mesh& m = unit_mesh(2);
  EXPECT_THROW(apply_A(m, Vector::Zero(3), 1.0, 2.0), std::invalid_argument);
}

TEST(ApplyA, Homogeneity) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(7);
  for (double r : {2.0, 2.5, 3.0, 4.0}) {
    const Vector u = random_field(m, rng);
    const Vector base = apply_A(m, u, 1.3, r);
    for (double t : {0.1, 2.0, 7.5}) {
      const Vector scaled = apply_A(m, t * u, 1.3, r);
      EXPECT_LE((scaled - std::pow(t, r - 1.0) * base).norm(), 1e-12 * scaled.norm()) << "r=" << r << " t=" << t;
    }
  }
}

TEST(ApplyA, StrongMonotonicitySampling) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.01, 3.0);
  for (double r : {2.0, 3.0, 4.0}) {
    for (double mu : {1.0, 2.5}) {
      const double M = mu / (std::pow(2.0, r - 2.0) * r);
      for (int k = 0; k < 100; ++k) {
        const Vector u = random_field(m, rng, scale(rng));
        const Vector v = random_field(m, rng, scale(rng));
        const double lhs = (apply_A(m, u, mu, r) - apply_A(m, v, mu, r)).dot(u - v);
        EXPECT_GE(lhs, M * std::pow(x_norm(m, u - v, r), r) - 1e-10);
      }
    }
  }
}

TEST(TangentA, LinearCaseIsScaledStiffness) {
  const Mesh& m = unit_mesh(3);
  std::mt19937_64 rng(3);
  const Vector u = random_field(m, rng);
  const SparseMatrix K = tangent_A(m, u, 2.5, 2.0, 0.0);
  EXPECT_LE((Eigen::MatrixXd(K) - 2.5 * Eigen::MatrixXd(stiffness_matrix(m))).norm(), 1e-12);
}

TEST(TangentA, ZeroGradientClosedForm) {
  const Mesh& m = unit_mesh(3);
  const double eps = 1e-3, mu = 1.7;
  const SparseMatrix K = tangent_A(m, Vector::Zero(m.num_nodes()), mu, 4.0, eps);
  // (|0|^2 + eps^2)^{(4-2)/2} = eps^2; the rank-one part vanishes at zero gradient.
  const Eigen::MatrixXd expected = mu * eps * eps * Eigen::MatrixXd(stiffness_matrix(m));
  EXPECT_LE((Eigen::MatrixXd(K) - expected).norm(), 1e-15);
}

TEST(TangentA, RejectsZeroEpsForRAboveTwo) {
  const Mesh& m = unit_mesh(2);
  EXPECT_THROW(tangent_A(m, Vector::Zero(m.num_nodes()), 1.0, 3.0, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(tangent_A(m, Vector::Zero(m.num_nodes()), 1.0, 2.0, 0.0));
}

TEST(TangentA, SymmetricAndSemidefinite) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(5);
  const Vector u = random_field(m, rng);
  const Eigen::MatrixXd K(tangent_A(m, u, 1.0, 3.0, 1e-4));
  EXPECT_LE((K - K.transpose()).norm(), 1e-12 * K.norm());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * K.norm());
}

// Directional finite differences of apply_A against the tangent: forward
// differences at t in {1e-4, 1e-5, 1e-6} shrink with t; central differences
// at 1e-6 agree to 1e-5 relative.
TEST(TangentA, FiniteDifferenceOracle) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(2024);
  const double eps = 1e-6;
  for (double r : {2.0, 3.0, 4.0}) {
    for (int k = 0; k < 10; ++k) {
      const Vector u = random_field(m, rng);
      const Vector d = random_field(m, rng);
      const Vector Jd = tangent_A(m, u, 1.0, r, eps) * d;
      const Vector base = apply_A(m, u, 1.0, r, eps);
      std::vector<double> fwd;
      for (double t : {1e-4, 1e-5, 1e-6})
        fwd.push_back(((apply_A(m, u + t * d, 1.0, r, eps) - base) / t - Jd).norm());
      if (r != 2.0) {
        EXPECT_LT(fwd[1], fwd[0]);
        EXPECT_LT(fwd[2], 1e-4 * Jd.norm());
      }
      const double t = 1e-6;
      const Vector central = (apply_A(m, u + t * d, 1.0, r, eps) - apply_A(m, u - t * d, 1.0, r, eps)) / (2.0 * t);
      EXPECT_LT((central - Jd).norm(), 1e-5 * Jd.norm()) << "r=" << r;
    }
  }
}

TEST(FrictionG4, ZeroCases) {
  const Mesh& m = unit_mesh(4);
  const FrictionLaw law;
  std::mt19937_64 rng(1);
  EXPECT_EQ(friction_residual_g4(m, Vector::Zero(m.num_nodes()), 2.0, law).norm(), 0.0);
  EXPECT_EQ(friction_residual_g4(m, random_field(m, rng), 0.0, law).norm(), 0.0);
}

TEST(FrictionG4, ConstantTrace) {
  const Mesh& m = unit_mesh(4);
  const Vector u = Vector::Ones(m.num_nodes());
  // g j(1) meas(G4) = 2 / sqrt(2)
  EXPECT_NEAR(friction_residual_g4(m, u, 2.0, FrictionLaw{}).sum(), 2.0 / std::sqrt(2.0), 1e-14);
}

TEST(FrictionG4, SupportedOnG4) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(9);
  const Vector G = friction_residual_g4(m, random_field(m, rng), 1.0, FrictionLaw{});
  for (int n = 0; n < m.num_nodes(); ++n)
    if (m.nodes[n].y != 1.0) {
      EXPECT_EQ(G[n], 0.0);
    }
}

TEST(FrictionG4, TangentMatchesCentralDifferences) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(4);
  for (auto kind : {FrictionKind::SmoothSign, FrictionKind::Arctan}) {
    const FrictionLaw law{kind};
    const Vector u = random_field(m, rng, 2.0);
    const Vector d = random_field(m, rng);
    const double t = 1e-6;
    const Vector fd =
        (friction_residual_g4(m, u + t * d, 1.5, law) - friction_residual_g4(m, u - t * d, 1.5, law)) / (2 * t);
    const Vector Jd = friction_tangent_g4(m, u, 1.5, law) * d;
    EXPECT_LT((fd - Jd).norm(), 1e-7 * Jd.norm());
  }
}

TEST(FrictionG4, AntisymmetryAndBound) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(8);
  const FrictionLaw law;
  const double g = 1.7;
  for (int k = 0; k < 50; ++k) {
    const Vector u = random_field(m, rng, 3.0);
    const Vector v = random_field(m, rng);
    const Vector G = friction_residual_g4(m, u, g, law);
    EXPECT_EQ(G.dot(v) + G.dot(-v), 0.0);
    EXPECT_LE(std::abs(G.dot(v)), g * law.bound() * gauss_trace_l1(m, Tag::G4, v) * (1 + 1e-14));
  }
}

TEST(FrictionLaw, PropertiesOfPotentials) {
  for (auto kind : {FrictionKind::SmoothSign, FrictionKind::Arctan}) {
    const FrictionLaw law{kind};
    EXPECT_EQ(law.value(0.0), 0.0);
    EXPECT_EQ(law.potential(0.0), 0.0);
    double prev = law.value(-50.0);
    for (double s = -50.0; s <= 50.0; s += 0.25) {
      EXPECT_GE(law.value(s), prev);
      EXPECT_LE(std::abs(law.value(s)), law.bound());
      EXPECT_LE(law.derivative(s), law.lipschitz() + 1e-15);
      const double h = 1e-5;
      EXPECT_NEAR((law.potential(s + h) - law.potential(s - h)) / (2 * h), law.value(s), 1e-8);
      prev = law.value(s);
    }
  }
  EXPECT_NEAR(FrictionLaw{}.value(1.0), 1.0 / std::sqrt(2.0), 1e-16);
}

TEST(LoadVector, Examples) {
  const Mesh& m = unit_mesh(4);
  EXPECT_EQ(load_vector(m, {0.0, 0.0}).norm(), 0.0);
  EXPECT_NEAR(load_vector(m, {1.0, 0.0}).sum(), 1.0, 1e-14);
  // \int_0^1 s ds
  EXPECT_NEAR(load_vector(m, {0.0, 1.0}).sum(), 0.5, 1e-14);
  const Vector F = load_vector(m, {1.0, 3.0});
  for (int n = 0; n < m.num_nodes(); ++n)
    if (m.nodes[n].x != 1.0) {
      EXPECT_EQ(F[n], 0.0);
    }
}

TEST(LoadVector, ExactAgainstFirstMoment) {
  // \int_G2 f v for v = y on the right side is \int_0^1 (c0 + c1 s) s ds.
  const Mesh& m = build_rect_mesh(3, 5, 2.0, 1.0);
  const Vector v = interpolate(m, [](double, double y) { return y; });
  const double c0 = 0.7, c1 = -1.3;
  EXPECT_NEAR(load_vector(m, {c0, c1}).dot(v), c0 / 2.0 + c1 / 3.0, 1e-14);
}

TEST(CouplingMatrix, RowStructure) {
  const Mesh& m = build_rect_mesh(5, 3, 2.0, 1.0);
  const SparseMatrix B = coupling_matrix(m);
  const auto g3 = trace_dofs(m, Tag::G3);
  ASSERT_EQ(B.rows(), static_cast<int>(g3.size()));
  const Vector ones = B * Vector::Ones(m.num_nodes());
  for (int e = 0; e < B.rows(); ++e) EXPECT_NEAR(ones[e], g3[e].length, 1e-15);
  const Eigen::MatrixXd D(B);
  for (int e = 0; e < B.rows(); ++e) EXPECT_LE((D.row(e).array() != 0.0).count(), 2);
}

TEST(Norms, XNorm) {
  const Mesh& m = unit_mesh(4);
  EXPECT_EQ(x_norm(m, Vector::Zero(m.num_nodes()), 3.0), 0.0);
  const Vector x = interpolate(m, [](double x, double) { return x; });
  for (double r : {2.0, 3.0, 4.5}) EXPECT_NEAR(x_norm(m, x, r), 1.0, 1e-14);
  EXPECT_NEAR(x_norm(m, 2.0 * x, 3.0), 2.0, 1e-14);
}

TEST(Norms, YNorm) {
  const Mesh& m = unit_mesh(4);
  EXPECT_EQ(y_norm(m, Vector::Zero(4), 2.0), 0.0);
  EXPECT_NEAR(y_norm(m, Vector::Ones(4), 2.0), 1.0, 1e-14);
  const Mesh wide = build_rect_mesh(4, 2, 2.0, 1.0);
  EXPECT_NEAR(y_norm(wide, Vector::Constant(4, 3.0), 2.0), 3.0 * std::sqrt(2.0), 1e-14);
  EXPECT_THROW(y_norm(m, Vector::Zero(3), 2.0), std::invalid_argument);
}

TEST(Norms, EdgePowerIntegralAgainstQuadrature) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  for (int k = 0; k < 200; ++k) {
    const double a = val(rng), b = (k % 3 == 0) ? a * (1 + 1e-9) : val(rng);
    for (double p : {1.0, 1.5, 2.0, 3.0}) {
      // composite midpoint, fine enough for a 1e-7 comparison
      const int n = 20000;
      double q = 0.0;
      for (int i = 0; i < n; ++i) {
        const double s = (i + 0.5) / n;
        q += std::pow(std::abs(a + (b - a) * s), p);
      }
      q *= 0.7 / n;
      EXPECT_NEAR(edge_power_integral(a, b, 0.7, p), q, 1e-7 * std::max(1.0, q)) << a << " " << b << " " << p;
    }
  }
}

TEST(Norms, TractionDualNorm) {
  const Mesh& m = unit_mesh(4);
  EXPECT_NEAR(traction_dual_norm(m, {1.0, 0.0}, 2.0), 1.0, 1e-14);
  // ||s||_{L^2(0,1)} = 1/sqrt(3)
  EXPECT_NEAR(traction_dual_norm(m, {0.0, 1.0}, 2.0), 1.0 / std::sqrt(3.0), 1e-14);
  // r = 3: r' = 3/2, ||1 - 2s||_{3/2} = (2 / (2 * 2.5))^{2/3}
  EXPECT_NEAR(traction_dual_norm(m, {1.0, -2.0}, 3.0), std::pow(1.0 / 2.5, 2.0 / 3.0), 1e-13);
}

TEST(OracleEnergy, Examples) {
  const Mesh& m = unit_mesh(4);
  ProblemSpec spec{.mu_star = 1.0, .r = 2.0, .theta = 0.3, .g = 1.0, .f_coeffs = {1.0, 0.5}};
  const EnergyValue zero = oracle_energy(m, Vector::Zero(m.num_nodes()), spec);
  EXPECT_EQ(zero.total, 0.0);

  std::mt19937_64 rng(6);
  ProblemSpec unloaded = spec;
  unloaded.f_coeffs = {0.0, 0.0};
  for (int k = 0; k < 20; ++k) EXPECT_GE(oracle_energy(m, random_field(m, rng), unloaded).total, 0.0);

  ProblemSpec plain{.mu_star = 1.0, .r = 2.0, .theta = 0.0, .g = 0.0, .f_coeffs = {1.0, 0.0}};
  const Vector x = interpolate(m, [](double x, double) { return x; });
  const EnergyValue ev = oracle_energy(m, x, plain);
  EXPECT_NEAR(ev.total, -0.5, 1e-14);
  EXPECT_NEAR(ev.bulk, 0.5, 1e-14);
  EXPECT_NEAR(ev.load, -1.0, 1e-14);
}

TEST(OracleEnergy, PartsSumToTotal) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(13);
  ProblemSpec spec{.mu_star = 2.0, .r = 3.0, .theta = 0.4, .g = 1.2, .f_coeffs = {1.0, -0.5}};
  for (int k = 0; k < 10; ++k) {
    const EnergyValue ev = oracle_energy(m, random_field(m, rng), spec);
    const double sum = ev.bulk + ev.gamma3 + ev.gamma4 + ev.load;
    EXPECT_NEAR(ev.total, sum, 1e-12 * std::max(1.0, std::abs(sum)));
  }
}

TEST(OracleEnergy, ConvexAlongSegments) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(14);
  ProblemSpec spec{.mu_star = 1.0, .r = 3.0, .theta = 0.5, .g = 2.0, .f_coeffs = {1.0, 1.0}};
  for (int k = 0; k < 30; ++k) {
    const Vector u = random_field(m, rng), v = random_field(m, rng);
    const double mid = oracle_energy(m, 0.5 * (u + v), spec).total;
    EXPECT_LE(mid, 0.5 * (oracle_energy(m, u, spec).total + oracle_energy(m, v, spec).total) + 1e-12);
  }
}

// With theta = 0 and eps = 0 the energy derivative is the assembled residual.
TEST(OracleEnergy, ResidualConsistency) {
  const Mesh& m = unit_mesh(4);
  std::mt19937_64 rng(15);
  for (double r : {2.0, 3.0, 4.0}) {
    ProblemSpec spec{.mu_star = 1.4, .r = r, .theta = 0.0, .g = 1.1, .f_coeffs = {0.8, -0.3}};
    for (int k = 0; k < 10; ++k) {
      const Vector u = random_field(m, rng), d = random_field(m, rng);
      const double t = 1e-6;
      const double fd = (oracle_energy(m, u + t * d, spec).total - oracle_energy(m, u - t * d, spec).total) / (2 * t);
      const double exact = (apply_A(m, u, spec.mu_star, r) + friction_residual_g4(m, u, spec.g, spec.friction()) -
                            load_vector(m, spec.f_coeffs))
                               .dot(d);
      EXPECT_LT(std::abs(fd - exact), 1e-5 * std::abs(exact)) << "r=" << r;
    }
  }
}

}  // namespace
}  // namespace mixedvi
