#include "massub/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace massub {

const char* to_string(NumericalFailure failure) noexcept {
  switch (failure) {
    case NumericalFailure::InvalidParameter: return "invalid parameter";
    case NumericalFailure::RangeError: return "range error";
    case NumericalFailure::Asymmetric: return "asymmetric matrix";
    case NumericalFailure::NotPositiveDefinite: return "matrix not positive definite";
    case NumericalFailure::SingularMatrix: return "singular matrix";
    case NumericalFailure::SingularJacobian: return "singular Jacobian";
    case NumericalFailure::NonConvergence: return "non-convergence";
    case NumericalFailure::Separation: return "separation";
    case NumericalFailure::SingularCovariance: return "singular covariance";
    case NumericalFailure::RankDeficient: return "rank deficiency";
    case NumericalFailure::EmptySubsample: return "empty subsample";
    case NumericalFailure::QuadratureNonConvergence: return "quadrature non-convergence";
  }
  return "numerical failure";
}

SolveReport solve_sym(const Matrix& a, const Matrix& b, Requirement require) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw InputError("solve_sym: dimension mismatch");
  }
  if (a.rows() == 0) return {b, 1.0, Definiteness::PositiveDefinite};
  if (!a.allFinite() || !b.allFinite()) {
    throw NumericalError(NumericalFailure::SingularMatrix, "solve_sym: non-finite input");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
    throw NumericalError(NumericalFailure::Asymmetric, "solve_sym: input is not symmetric");
  }

  const Eigen::LDLT<Matrix> ldlt(a);
  const Vector pivots = ldlt.vectorD();
  const double max_pivot = pivots.cwiseAbs().maxCoeff();
  const double min_pivot = pivots.cwiseAbs().minCoeff();

  SolveReport report;
  report.condition_estimate =
      min_pivot > 0.0 ? std::max(1.0, max_pivot / min_pivot) : std::numeric_limits<double>::infinity();
  if (pivots.minCoeff() > 0.0) {
    report.definiteness = Definiteness::PositiveDefinite;
  } else if (pivots.minCoeff() >= 0.0) {
    report.definiteness = Definiteness::PositiveSemidefinite;
  } else {
    report.definiteness = Definiteness::Indefinite;
  }

  if (!(report.condition_estimate <= kConditionLimit)) {
    std::ostringstream msg;
    msg << "solve_sym: condition estimate " << report.condition_estimate << " exceeds "
        << kConditionLimit;
    throw NumericalError(NumericalFailure::SingularMatrix, msg.str());
  }
  if (require == Requirement::PositiveDefinite &&
      report.definiteness != Definiteness::PositiveDefinite) {
    throw NumericalError(NumericalFailure::NotPositiveDefinite,
                         "solve_sym: matrix has a non-positive pivot");
  }
  report.solution = ldlt.solve(b);
  return report;
}

Matrix finite_diff_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& theta,
                            double h_rel) {
  const Vector f0 = f(theta);
  Matrix jac(f0.size(), theta.size());
  Vector probe = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = h_rel * std::max(1.0, std::abs(theta[j]));
    probe[j] = theta[j] + h;
    const Vector up = f(probe);
    probe[j] = theta[j] - h;
    const Vector down = f(probe);
    probe[j] = theta[j];
    if (!up.allFinite() || !down.allFinite()) {
      throw NumericalError(NumericalFailure::RangeError,
                           "finite_diff_jacobian: non-finite function value");
    }
    jac.col(j) = (up - down) / (2.0 * h);
  }
  return jac;
}

}  // namespace massub
