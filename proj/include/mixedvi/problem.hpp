#ifndef MIXEDVI_PROBLEM_HPP
#define MIXEDVI_PROBLEM_HPP

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mixedvi {

/// Friction potential j on G4. Every kind is nondecreasing, bounded and
/// Lipschitz with j(0) = 0.
enum class FrictionKind {
  SmoothSign,  // j(s) = s / sqrt(s^2 + 1)
  Arctan,      // j(s) = (2/pi) atan(s)
};

inline std::string_view to_string(FrictionKind k) {
  switch (k) {
    case FrictionKind::SmoothSign: return "smooth_sign";
    case FrictionKind::Arctan: return "arctan";
  }
  return "?";
}

inline std::optional<FrictionKind> parse_friction_kind(std::string_view s) {
  if (s == "smooth_sign") return FrictionKind::SmoothSign;
  if (s == "arctan") return FrictionKind::Arctan;
  return std::nullopt;
}

struct FrictionLaw {
  FrictionKind kind = FrictionKind::SmoothSign;

  double value(double s) const {
    switch (kind) {
      case FrictionKind::SmoothSign: return s / std::sqrt(s * s + 1.0);
      case FrictionKind::Arctan: return 2.0 / std::numbers::pi * std::atan(s);
    }
    return 0.0;
  }

  double derivative(double s) const {
    switch (kind) {
      case FrictionKind::SmoothSign: {
        const double q = s * s + 1.0;
        return 1.0 / (q * std::sqrt(q));
      }
      case FrictionKind::Arctan: return 2.0 / std::numbers::pi / (1.0 + s * s);
    }
    return 0.0;
  }

  /// Primitive with potential(0) = 0; convex because j is nondecreasing.
  double potential(double s) const {
    switch (kind) {
      case FrictionKind::SmoothSign: {
        // sqrt(s^2+1) - 1 without cancellation near 0.
        const double s2 = s * s;
        return s2 / (std::sqrt(s2 + 1.0) + 1.0);
      }
      case FrictionKind::Arctan:
        return 2.0 / std::numbers::pi * (s * std::atan(s) - 0.5 * std::log1p(s * s));
    }
    return 0.0;
  }

  /// sup |j|
  double bound() const { return 1.0; }

  /// Lipschitz rank of j.
  double lipschitz() const { return kind == FrictionKind::SmoothSign ? 1.0 : 2.0 / std::numbers::pi; }
};

/// Traction density on G2: f(s) = f_coeffs[0] + f_coeffs[1] * s, with s the
/// arc length along the G2 side.
using TractionCoeffs = std::array<double, 2>;

struct ProblemSpec {
  double mu_star = 1.0;
  double r = 2.0;
  double theta = 0.0;
  double g = 0.0;
  TractionCoeffs f_coeffs{0.0, 0.0};
  FrictionKind j_kind = FrictionKind::SmoothSign;

  FrictionLaw friction() const { return {j_kind}; }

  /// Conjugate exponent r' with 1/r + 1/r' = 1.
  double r_conj() const { return r / (r - 1.0); }

  bool operator==(const ProblemSpec&) const = default;
};

/// A violated constraint on the problem data, with its modelling meaning.
struct Violation {
  std::string field;
  std::string message;
};

inline std::vector<Violation> check(const ProblemSpec& p) {
  std::vector<Violation> out;
  if (!(p.mu_star > 0.0) || !std::isfinite(p.mu_star))
    out.push_back({"problem.mu_star", "mu_star > 0 required (material coefficient)"});
  if (!(p.r >= 2.0) || !std::isfinite(p.r))
    out.push_back({"problem.r", "r >= 2 required (2 <= r < infinity)"});
  if (!(p.theta >= 0.0) || !std::isfinite(p.theta))
    out.push_back({"problem.theta", "theta < 0 violates theta >= 0 (friction bound on G3)"});
  if (!(p.g >= 0.0) || !std::isfinite(p.g))
    out.push_back({"problem.g", "g < 0 violates g >= 0 (friction bound on G4)"});
  for (double c : p.f_coeffs)
    if (!std::isfinite(c)) out.push_back({"problem.f_coeffs", "traction coefficients must be finite (f in Z')"});
  return out;
}

inline void validate(const ProblemSpec& p) {
  if (auto v = check(p); !v.empty()) throw std::invalid_argument(v.front().field + ": " + v.front().message);
}

}  // namespace mixedvi

#endif  // MIXEDVI_PROBLEM_HPP
