#pragma once

#include "massub/types.hpp"

#include <functional>
#include <numbers>

namespace massub {

enum class Definiteness { PositiveDefinite, PositiveSemidefinite, Indefinite };

struct SolveReport {
  Matrix solution;
  /// Ratio of the largest to smallest |pivot| of the LDL^T factorization (>= 1).
  double condition_estimate = 1.0;
  Definiteness definiteness = Definiteness::PositiveDefinite;
};

enum class Requirement { PositiveDefinite, AnyNonsingular };

inline constexpr double kConditionLimit = 1e12;
inline constexpr double kSymmetryTolerance = 1e-10;

/// Solves A X = B for symmetric A via a pivoted LDL^T factorization.
///
/// Throws NumericalError: Asymmetric when A is not symmetric to 1e-10 (relative to
/// its largest entry), SingularMatrix when the pivot ratio exceeds 1e12, and
/// NotPositiveDefinite when `require` asks for it and a pivot is not positive.
SolveReport solve_sym(const Matrix& a, const Matrix& b,
                      Requirement require = Requirement::PositiveDefinite);

/// Central-difference Jacobian with step h_rel * max(1, |theta_j|).
Matrix finite_diff_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& theta,
                            double h_rel = 1e-6);

// Special functions. All require x > 0 and throw InputError otherwise.
double gamma_fn(double x);
double log_gamma(double x);
double digamma(double x);
double trigamma(double x);
inline constexpr double euler_gamma() noexcept { return std::numbers::egamma; }

/// Globally adaptive Gauss-Kronrod (7/15) integration of a vector-valued function on [a,b].
///
/// Refines the interval with the largest error estimate until the summed estimate is
/// below abs_tol. Throws NumericalError(QuadratureNonConvergence) if an interval needs
/// splitting beyond max_depth bisections.
struct QuadratureOptions {
  double abs_tol = 1e-10;
  int max_depth = 60;
  std::size_t max_intervals = 200000;
};

struct QuadratureResult {
  Vector value;
  double error_estimate = 0.0;
  std::size_t intervals = 0;
};

QuadratureResult integrate(const std::function<void(double, Vector&)>& f, std::size_t dim,
                           double a, double b, const QuadratureOptions& options = {});

}  // namespace massub
