#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace massub {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Model parameter vector. Logistic: (intercept, slopes). Weibull: (shape, intercept, slopes).
using Parameter = Eigen::VectorXd;

/// One record: raw covariates (no intercept column) and the response.
struct Observation {
  std::span<const double> x;
  double y = 0.0;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, malformed input data or a violated precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

enum class NumericalFailure {
  InvalidParameter,
  RangeError,
  Asymmetric,
  NotPositiveDefinite,
  SingularMatrix,
  SingularJacobian,
  NonConvergence,
  Separation,
  SingularCovariance,
  RankDeficient,
  EmptySubsample,
  QuadratureNonConvergence,
};

const char* to_string(NumericalFailure failure) noexcept;

class NumericalError : public Error {
 public:
  NumericalError(NumericalFailure failure, const std::string& what)
      : Error(std::string(to_string(failure)) + ": " + what), failure_(failure) {}

  NumericalFailure failure() const noexcept { return failure_; }

 private:
  NumericalFailure failure_;
};

}  // namespace massub
