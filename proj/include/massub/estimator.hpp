#pragma once

#include "massub/dataset.hpp"
#include "massub/model.hpp"
#include "massub/moments.hpp"
#include "massub/sampling.hpp"

#include <functional>
#include <optional>
#include <string_view>

namespace massub {

enum class EstimatorKind {
  /// u = psi, for uniform plans.
  UniformMle,
  /// u = (rho / p(x,y)) psi.
  Ipw,
  /// u = psi - pi_bar_dot / pi_bar, the sampled conditional likelihood score (logistic only).
  Mscl,
};

std::string_view to_string(EstimatorKind kind) noexcept;

/// Throws InputError when the kind cannot be used with the model (Mscl needs logistic).
void check_estimator(EstimatorKind kind, const ConditionalModel& model);

struct PiBar {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// pi_bar(x) = p(x,1) sigma(eta) + p(x,0) (1 - sigma(eta)) with its first two derivatives in theta.
PiBar mscl_pi_bar(const ConditionalModel& model, const SubsamplingPlan& plan, const Parameter& theta,
                  std::span<const double> x);

/// Unified estimating function; p is the inclusion probability of obs under the plan.
void eval_u(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
            const Parameter& theta, const Observation& obs, double p, Eigen::Ref<Vector> out);
void eval_u_jac(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                const Parameter& theta, const Observation& obs, double p, Eigen::Ref<Matrix> out);
Vector eval_u(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
              const Parameter& theta, const Observation& obs);
Matrix eval_u_jac(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                  const Parameter& theta, const Observation& obs);

inline constexpr double kNewtonTolerance = 1e-8;
inline constexpr int kNewtonMaxIterations = 100;
inline constexpr double kSeparationNorm = 50.0;
/// Logistic fits whose mean Jacobian norm falls below this at convergence are reported as separated.
inline constexpr double kSaturationLevel = 1e-6;

struct NewtonResult {
  Parameter theta;
  int iterations = 0;
  /// ||sum u|| / count at the solution.
  double residual = 0.0;
};

/// Sum of estimating functions and, when jac is non-null, of their Jacobians.
using EstimatingSum = std::function<void(const Parameter&, Vector& sum, Matrix* jac)>;

/// Newton on sum u(theta) = 0 with step halving on ||sum u||.
NewtonResult newton_solve(const ConditionalModel& model, const EstimatingSum& sum, double count,
                          Parameter initial);

/// Plain subsampling estimator: Newton on sum_{i in S} u_i(theta) = 0.
NewtonResult solve_plain(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                         const SubsamplingPlan& plan, const Parameter& initial);

/// Whole-data MLE over a record source (the full-data baseline).
NewtonResult solve_full_mle(const ConditionalModel& model, const RecordSource& source,
                            const Parameter& initial, unsigned threads = 1);

struct GmmAssembly {
  Vector g;
  Matrix G;
  Matrix Omega;
  Parameter theta_tilde;
  double n_expected = 0.0;
  double rho = 0.0;
  std::size_t d = 0;
  std::size_t q = 0;
  Vector mu_hat;
  /// Added to the Omega22 diagonal when jitter was requested; 0 otherwise.
  double jitter = 0.0;
};

/// Builds g, G and Omega at theta_tilde. A null moment gives the q = 0 assembly.
GmmAssembly assemble_gmm(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                         const SubsamplingPlan& plan, const MomentFunction* moment,
                         const Vector* mu_hat, const Parameter& theta_tilde);

/// Adds eps * tr(Omega22) / q to the Omega22 diagonal.
void apply_jitter(GmmAssembly& assembly, double eps = 1e-10);

struct MasStep {
  Parameter theta_mas;
  Matrix v_hat;
  Vector std_errors;
  double condition_omega = 1.0;
};

/// theta_MAS = theta_tilde - (G^T Omega^-1 G)^-1 G^T Omega^-1 g with V = (G^T Omega^-1 G)^-1.
MasStep mas_step(const GmmAssembly& assembly);
Matrix variance_estimate(const GmmAssembly& assembly);

/// Sandwich (G1^T Omega11^-1 G1)^-1 at theta_tilde.
Matrix plain_variance(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                      const SubsamplingPlan& plan, const Parameter& theta_tilde);

}  // namespace massub
