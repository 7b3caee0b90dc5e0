#include "massub/estimator.hpp"

#include "massub/numerics.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace massub {
namespace {

using Index = Eigen::Index;

Vector augmented(std::span<const double> x) {
  Vector z(static_cast<Index>(x.size()) + 1);
  z[0] = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) z[static_cast<Index>(j) + 1] = x[j];
  return z;
}

double ipw_factor(const SubsamplingPlan& plan, double p) {
  if (!(p > 0.0)) {
    throw InputError("inclusion probability must be positive, got " + std::to_string(p));
  }
  return plan.ipw_weight(p);
}

void symmetrize(Matrix& a) { a = 0.5 * (a + a.transpose()).eval(); }

const char* block_name(const Matrix& omega, Index d) {
  const Index q = omega.rows() - d;
  auto bad = [](const Matrix& b) {
    try {
      solve_sym(b, Matrix::Identity(b.rows(), b.rows()));
      return false;
    } catch (const NumericalError&) {
      return true;
    }
  };
  if (bad(omega.topLeftCorner(d, d))) return "Omega11";
  if (q > 0 && bad(omega.bottomRightCorner(q, q))) return "Omega22";
  return "Omega (joint u/v blocks)";
}

}  // namespace

std::string_view to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::UniformMle: return "uniform-mle";
    case EstimatorKind::Ipw: return "ipw";
    case EstimatorKind::Mscl: return "mscl";
  }
  return "?";
}

void check_estimator(EstimatorKind kind, const ConditionalModel& model) {
  if (kind == EstimatorKind::Mscl && !model.supports_mscl()) {
    throw InputError("MSCL estimator is not available for the " + std::string(model.name()) +
                     " model");
  }
}

PiBar mscl_pi_bar(const ConditionalModel& model, const SubsamplingPlan& plan, const Parameter& theta,
                  std::span<const double> x) {
  check_estimator(EstimatorKind::Mscl, model);
  const double p1 = plan.probability({x, 1.0});
  const double p0 = plan.probability({x, 0.0});
  const double s = sigmoid(linear_predictor(theta[0], theta.data() + 1, x));
  PiBar out;
  out.value = p1 * s + p0 * (1.0 - s);
  if (!(out.value > 0.0)) {
    throw NumericalError(NumericalFailure::RangeError,
                         "pi_bar must be positive, got " + std::to_string(out.value));
  }
  const Vector z = augmented(x);
  const double w = (p1 - p0) * s * (1.0 - s);
  out.gradient = w * z;
  out.hessian = (w * (1.0 - 2.0 * s)) * (z * z.transpose());
  return out;
}

namespace {

// p(x,1) and p(x,0) do not depend on theta; fits compute them once per record.
struct MsclProbs {
  double p1 = 0.0;
  double p0 = 0.0;
};

MsclProbs mscl_probs(const SubsamplingPlan& plan, std::span<const double> x) {
  return {plan.probability({x, 1.0}), plan.probability({x, 0.0})};
}

std::vector<MsclProbs> mscl_probs(EstimatorKind kind, const SubsamplingPlan& plan,
                                  const Subsample& subsample) {
  std::vector<MsclProbs> out;
  if (kind != EstimatorKind::Mscl) return out;
  out.reserve(subsample.size());
  for (std::size_t k = 0; k < subsample.size(); ++k) out.push_back(mscl_probs(plan, subsample.row(k).x));
  return out;
}

struct MsclTerms {
  double s = 0.0;
  double pi_bar = 0.0;
  double ratio = 0.0;  // (p1 - p0) s (1 - s) / pi_bar
};

MsclTerms mscl_terms(const MsclProbs& pr, const Parameter& theta, std::span<const double> x) {
  MsclTerms t;
  t.s = sigmoid(linear_predictor(theta[0], theta.data() + 1, x));
  t.pi_bar = pr.p1 * t.s + pr.p0 * (1.0 - t.s);
  if (!(t.pi_bar > 0.0)) {
    throw NumericalError(NumericalFailure::RangeError,
                         "pi_bar must be positive, got " + std::to_string(t.pi_bar));
  }
  t.ratio = (pr.p1 - pr.p0) * t.s * (1.0 - t.s) / t.pi_bar;
  return t;
}

void eval_u_impl(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                 const Parameter& theta, const Observation& obs, double p, const MsclProbs* pr,
                 Eigen::Ref<Vector> out) {
  model.score(theta, obs, out);
  switch (kind) {
    case EstimatorKind::UniformMle:
      return;
    case EstimatorKind::Ipw:
      out *= ipw_factor(plan, p);
      return;
    case EstimatorKind::Mscl: {
      const MsclTerms t = mscl_terms(*pr, theta, obs.x);
      out[0] -= t.ratio;
      for (std::size_t j = 0; j < obs.x.size(); ++j) out[static_cast<Index>(j) + 1] -= t.ratio * obs.x[j];
      return;
    }
  }
}

void eval_u_jac_impl(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                     const Parameter& theta, const Observation& obs, double p, const MsclProbs* pr,
                     Eigen::Ref<Matrix> out) {
  model.score_jacobian(theta, obs, out);
  switch (kind) {
    case EstimatorKind::UniformMle:
      return;
    case EstimatorKind::Ipw:
      out *= ipw_factor(plan, p);
      return;
    case EstimatorKind::Mscl: {
      // pi_bar''/pi_bar - pi_bar' pi_bar'^T / pi_bar^2 = c z z^T
      const MsclTerms t = mscl_terms(*pr, theta, obs.x);
      const double c = t.ratio * (1.0 - 2.0 * t.s) - t.ratio * t.ratio;
      const auto d = out.rows();
      for (Index i = 0; i < d; ++i) {
        const double zi = i == 0 ? 1.0 : obs.x[static_cast<std::size_t>(i) - 1];
        for (Index j = 0; j < d; ++j) {
          const double zj = j == 0 ? 1.0 : obs.x[static_cast<std::size_t>(j) - 1];
          out(i, j) -= c * (zi * zj);
        }
      }
      return;
    }
  }
}

}  // namespace

void eval_u(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
            const Parameter& theta, const Observation& obs, double p, Eigen::Ref<Vector> out) {
  check_estimator(kind, model);
  const MsclProbs pr = kind == EstimatorKind::Mscl ? mscl_probs(plan, obs.x) : MsclProbs{};
  eval_u_impl(kind, model, plan, theta, obs, p, &pr, out);
}

void eval_u_jac(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                const Parameter& theta, const Observation& obs, double p, Eigen::Ref<Matrix> out) {
  check_estimator(kind, model);
  const MsclProbs pr = kind == EstimatorKind::Mscl ? mscl_probs(plan, obs.x) : MsclProbs{};
  eval_u_jac_impl(kind, model, plan, theta, obs, p, &pr, out);
}

Vector eval_u(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
              const Parameter& theta, const Observation& obs) {
  Vector out(static_cast<Index>(model.dim()));
  eval_u(kind, model, plan, theta, obs, plan.probability(obs), out);
  return out;
}

Matrix eval_u_jac(EstimatorKind kind, const ConditionalModel& model, const SubsamplingPlan& plan,
                  const Parameter& theta, const Observation& obs) {
  const auto d = static_cast<Index>(model.dim());
  Matrix out(d, d);
  eval_u_jac(kind, model, plan, theta, obs, plan.probability(obs), out);
  return out;
}

NewtonResult newton_solve(const ConditionalModel& model, const EstimatingSum& sum, double count,
                          Parameter initial) {
  if (!(count > 0.0)) throw NumericalError(NumericalFailure::EmptySubsample, "no records to fit");
  model.check_parameter(initial);
  const bool logistic = model.family() == ModelFamily::Logistic;

  NewtonResult result;
  result.theta = std::move(initial);
  Vector s;
  Matrix jac;
  sum(result.theta, s, &jac);
  double r = s.norm();

  for (int it = 0; it <= kNewtonMaxIterations; ++it) {
    result.iterations = it;
    result.residual = r / count;
    if (!std::isfinite(r) || !jac.allFinite()) {
      throw NumericalError(NumericalFailure::NonConvergence, "estimating equations became non-finite");
    }
    if (result.residual < kNewtonTolerance) {
      // Separated data drive every sigma(1 - sigma) to zero; the equations then
      // "converge" at a large finite theta with a vanishing Jacobian.
      if (logistic && jac.norm() / count < kSaturationLevel) {
        throw NumericalError(NumericalFailure::Separation,
                             "fitted probabilities saturate at 0/1; the responses look perfectly separated");
      }
      return result;
    }
    if (it == kNewtonMaxIterations) break;

    symmetrize(jac);
    Matrix neg = -jac;
    Vector step;
    try {
      step = solve_sym(neg, s, Requirement::AnyNonsingular).solution.col(0);
    } catch (const NumericalError& e) {
      throw NumericalError(NumericalFailure::SingularJacobian,
                           std::string("Newton Jacobian cannot be solved (") + e.what() + ")");
    }

    // Halve until ||sum u|| decreases; a candidate outside the parameter space counts as a failure.
    double t = 1.0;
    bool accepted = false;
    Parameter candidate;
    Vector s_candidate;
    for (int h = 0; h < 50 && !accepted; ++h, t *= 0.5) {
      candidate = result.theta + t * step;
      try {
        model.check_parameter(candidate);
        sum(candidate, s_candidate, nullptr);
      } catch (const NumericalError&) {
        continue;
      }
      const double rc = s_candidate.norm();
      if (std::isfinite(rc) && rc < r) accepted = true;
    }
    if (!accepted) {
      throw NumericalError(NumericalFailure::NonConvergence,
                           "line search could not reduce the estimating equations (residual " +
                               std::to_string(r / count) + ")");
    }
    result.theta = candidate;
    if (logistic && result.theta.norm() > kSeparationNorm) {
      throw NumericalError(NumericalFailure::Separation,
                           "parameter norm exceeded 50; the responses look perfectly separated");
    }
    sum(result.theta, s, &jac);
    r = s.norm();
  }
  throw NumericalError(NumericalFailure::NonConvergence,
                       "Newton did not converge in " + std::to_string(kNewtonMaxIterations) +
                           " iterations (residual " + std::to_string(r / count) + ")");
}

NewtonResult solve_plain(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                         const SubsamplingPlan& plan, const Parameter& initial) {
  check_estimator(kind, model);
  if (subsample.empty()) {
    throw NumericalError(NumericalFailure::EmptySubsample, "subsample is empty");
  }
  const auto d = static_cast<Index>(model.dim());
  const std::vector<MsclProbs> probs = mscl_probs(kind, plan, subsample);
  EstimatingSum sum = [&](const Parameter& theta, Vector& s, Matrix* jac) {
    s = Vector::Zero(d);
    if (jac != nullptr) *jac = Matrix::Zero(d, d);
    Vector u(d);
    Matrix uj(d, d);
    for (std::size_t k = 0; k < subsample.size(); ++k) {
      const Observation obs = subsample.row(k);
      const MsclProbs* pr = probs.empty() ? nullptr : &probs[k];
      eval_u_impl(kind, model, plan, theta, obs, subsample.prob[k], pr, u);
      s += u;
      if (jac != nullptr) {
        eval_u_jac_impl(kind, model, plan, theta, obs, subsample.prob[k], pr, uj);
        *jac += uj;
      }
    }
  };
  return newton_solve(model, sum, static_cast<double>(subsample.size()), initial);
}

NewtonResult solve_full_mle(const ConditionalModel& model, const RecordSource& source,
                            const Parameter& initial, unsigned threads) {
  const auto d = static_cast<Index>(model.dim());
  EstimatingSum sum = [&](const Parameter& theta, Vector& s, Matrix* jac) {
    std::vector<Vector> block_s(source.block_count(), Vector::Zero(d));
    std::vector<Matrix> block_j(jac != nullptr ? source.block_count() : 0, Matrix::Zero(d, d));
    source.scan(
        [&](const RowBlock& block) {
          Vector u(d);
          Matrix uj(d, d);
          Vector& bs = block_s[block.block_id];
          for (std::size_t k = 0; k < block.count; ++k) {
            const Observation obs = block.row(k);
            model.score(theta, obs, u);
            bs += u;
            if (jac != nullptr) {
              model.score_jacobian(theta, obs, uj);
              block_j[block.block_id] += uj;
            }
          }
        },
        threads);
    s = Vector::Zero(d);
    for (const auto& b : block_s) s += b;
    if (jac != nullptr) {
      *jac = Matrix::Zero(d, d);
      for (const auto& b : block_j) *jac += b;
    }
  };
  return newton_solve(model, sum, static_cast<double>(source.size()), initial);
}

GmmAssembly assemble_gmm(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                         const SubsamplingPlan& plan, const MomentFunction* moment,
                         const Vector* mu_hat, const Parameter& theta_tilde) {
  check_estimator(kind, model);
  model.check_parameter(theta_tilde);
  if (subsample.empty()) {
    throw NumericalError(NumericalFailure::EmptySubsample, "cannot assemble on an empty subsample");
  }
  const auto d = static_cast<Index>(model.dim());
  Index q = 0;
  if (moment != nullptr) {
    if (mu_hat == nullptr) throw InputError("a moment function needs its whole-data mean");
    q = static_cast<Index>(moment->q());
    if (mu_hat->size() != q) {
      throw InputError("moment dimension " + std::to_string(q) + " does not match mu_hat length " +
                       std::to_string(mu_hat->size()));
    }
  }

  GmmAssembly a;
  a.theta_tilde = theta_tilde;
  a.n_expected = subsample.expected_n;
  a.rho = plan.rho;
  a.d = static_cast<std::size_t>(d);
  a.q = static_cast<std::size_t>(q);
  if (mu_hat != nullptr) a.mu_hat = *mu_hat;
  a.g = Vector::Zero(d + q);
  a.G = Matrix::Zero(d + q, d);
  a.Omega = Matrix::Zero(d + q, d + q);

  const double rho = plan.rho;
  const std::vector<MsclProbs> probs = mscl_probs(kind, plan, subsample);
  Vector h(q), m(q);
  Matrix uj(d, d), mj(q, d);
  // Omega per record is z z^T with z = (u, v - rho e), plus rho^2 (1/p - 1) e e^T in the moment block.
  // Columns are collected in blocks so each block is one rank-k update.
  constexpr Index kBlock = 256;
  Matrix zb(d + q, kBlock), eb(q, kBlock);
  Index filled = 0;
  auto omega = a.Omega.selfadjointView<Eigen::Lower>();
  auto omega22 = a.Omega.bottomRightCorner(q, q).selfadjointView<Eigen::Lower>();
  auto flush = [&] {
    if (filled == 0) return;
    omega.rankUpdate(zb.leftCols(filled));
    if (q > 0) omega22.rankUpdate(eb.leftCols(filled));
    filled = 0;
  };
  for (std::size_t k = 0; k < subsample.size(); ++k) {
    const Observation obs = subsample.row(k);
    const double p = subsample.prob[k];
    const MsclProbs* pr = probs.empty() ? nullptr : &probs[k];
    auto z = zb.col(filled);
    auto u = z.head(d);
    eval_u_impl(kind, model, plan, theta_tilde, obs, p, pr, u);
    eval_u_jac_impl(kind, model, plan, theta_tilde, obs, p, pr, uj);
    a.g.head(d) += u;
    a.G.topRows(d) += uj;
    if (q > 0) {
      const double w = ipw_factor(plan, p);
      auto e = eb.col(filled);
      moment->eval_h(obs, h);
      cond_mean(*moment, model, theta_tilde, obs.x, m);
      cond_mean_jac(*moment, model, theta_tilde, obs.x, mj);
      e = h - *mu_hat;
      m = w * (m - *mu_hat);  // v
      a.g.tail(q) += m;
      a.G.bottomRows(q) += w * mj;
      z.tail(q) = m - rho * e;
      e *= rho * std::sqrt(1.0 / p - 1.0);
    }
    if (++filled == kBlock) flush();
  }
  flush();
  a.Omega.triangularView<Eigen::StrictlyUpper>() = a.Omega.transpose();
  const double n = a.n_expected;
  a.g /= n;
  a.G /= n;
  a.Omega /= n;
  symmetrize(a.Omega);
  return a;
}

void apply_jitter(GmmAssembly& assembly, double eps) {
  if (assembly.q == 0) return;
  const auto q = static_cast<Index>(assembly.q);
  const double add = eps * assembly.Omega.bottomRightCorner(q, q).trace() / static_cast<double>(q);
  assembly.Omega.bottomRightCorner(q, q).diagonal().array() += add;
  assembly.jitter += add;
}

MasStep mas_step(const GmmAssembly& assembly) {
  const auto d = static_cast<Index>(assembly.d);
  const Index k = assembly.G.rows();
  Matrix rhs(k, d + 1);
  rhs.leftCols(d) = assembly.G;
  rhs.col(d) = assembly.g;

  SolveReport omega_solve;
  try {
    omega_solve = solve_sym(assembly.Omega, rhs, Requirement::PositiveDefinite);
  } catch (const NumericalError& e) {
    throw NumericalError(NumericalFailure::SingularCovariance,
                         std::string("cannot factor ") + block_name(assembly.Omega, d) + " (" +
                             e.what() + ")");
  }
  Matrix info = assembly.G.transpose() * omega_solve.solution.leftCols(d);
  symmetrize(info);
  Matrix rhs2(d, d + 1);
  rhs2.leftCols(d) = Matrix::Identity(d, d);
  rhs2.col(d) = assembly.G.transpose() * omega_solve.solution.col(d);

  SolveReport info_solve;
  try {
    info_solve = solve_sym(info, rhs2, Requirement::PositiveDefinite);
  } catch (const NumericalError& e) {
    throw NumericalError(NumericalFailure::RankDeficient,
                         std::string("G^T Omega^-1 G is not positive definite (") + e.what() + ")");
  }

  MasStep out;
  out.theta_mas = assembly.theta_tilde - info_solve.solution.col(d);
  out.v_hat = info_solve.solution.leftCols(d);
  symmetrize(out.v_hat);
  out.std_errors = (out.v_hat.diagonal() / assembly.n_expected).array().sqrt();
  out.condition_omega = omega_solve.condition_estimate;
  if (!out.std_errors.allFinite() || !out.theta_mas.allFinite()) {
    throw NumericalError(NumericalFailure::RankDeficient, "variance estimate is not finite");
  }
  return out;
}

Matrix variance_estimate(const GmmAssembly& assembly) { return mas_step(assembly).v_hat; }

Matrix plain_variance(EstimatorKind kind, const Subsample& subsample, const ConditionalModel& model,
                      const SubsamplingPlan& plan, const Parameter& theta_tilde) {
  return variance_estimate(
      assemble_gmm(kind, subsample, model, plan, nullptr, nullptr, theta_tilde));
}

}  // namespace massub
