#include "massub/model.hpp"

#include "massub/numerics.hpp"

#include <cmath>
#include <string>

namespace massub {
namespace {

void require_finite(double value, std::string_view what) {
  if (!std::isfinite(value)) {
    throw NumericalError(NumericalFailure::InvalidParameter,
                         std::string(what) + " is not finite");
  }
}

void require_finite_covariates(const Observation& obs, std::size_t p) {
  if (obs.x.size() != p) {
    throw InputError("observation has " + std::to_string(obs.x.size()) +
                     " covariates, model expects " + std::to_string(p));
  }
  for (double v : obs.x) {
    if (!std::isfinite(v)) throw InputError("observation has a non-finite covariate");
  }
  if (!std::isfinite(obs.y)) throw InputError("observation has a non-finite response");
}

void require_draw(double draw) {
  if (!(draw > 0.0 && draw < 1.0)) {
    throw InputError("sample_response: draw must lie in (0,1), got " + std::to_string(draw));
  }
}

// Writes (1, x^T) into out.
void augmented(std::span<const double> x, Eigen::Ref<Vector> out) {
  out[0] = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) out[static_cast<Eigen::Index>(j) + 1] = x[j];
}

}  // namespace

void ConditionalModel::check_length(const Parameter& theta) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) {
    throw NumericalError(NumericalFailure::InvalidParameter,
                         std::string(name()) + " parameter has length " +
                             std::to_string(theta.size()) + ", expected " + std::to_string(dim()));
  }
  if (!theta.allFinite()) {
    throw NumericalError(NumericalFailure::InvalidParameter, "parameter has non-finite entries");
  }
}

double model_linear_predictor(const ConditionalModel& model, const Parameter& theta,
                              std::span<const double> x) noexcept {
  if (model.family() == ModelFamily::Logistic) return linear_predictor(theta[0], theta.data() + 1, x);
  return linear_predictor(theta[1], theta.data() + 2, x);
}

// ---------------------------------------------------------------- logistic

void LogisticGlmModel::check_parameter(const Parameter& theta) const { check_length(theta); }

void LogisticGlmModel::check_observation(const Observation& obs) const {
  require_finite_covariates(obs, covariate_dim());
  if (obs.y != 0.0 && obs.y != 1.0) {
    throw InputError("logistic response must be exactly 0 or 1, got " + std::to_string(obs.y));
  }
}

double LogisticGlmModel::log_density(const Parameter& theta, const Observation& obs) const {
  const double eta = linear_predictor(theta[0], theta.data() + 1, obs.x);
  const double value = obs.y * eta - log1p_exp(eta);
  require_finite(value, "logistic log-density");
  return value;
}

void LogisticGlmModel::score(const Parameter& theta, const Observation& obs,
                             Eigen::Ref<Vector> out) const {
  const double eta = linear_predictor(theta[0], theta.data() + 1, obs.x);
  const double residual = obs.y - sigmoid(eta);
  augmented(obs.x, out);
  out *= residual;
}

void LogisticGlmModel::score_jacobian(const Parameter& theta, const Observation& obs,
                                      Eigen::Ref<Matrix> out) const {
  const double eta = linear_predictor(theta[0], theta.data() + 1, obs.x);
  const double mu = sigmoid(eta);
  const double w = mu * (1.0 - mu);
  const auto d = static_cast<Eigen::Index>(dim());
  const double* x = obs.x.data();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double zj = j == 0 ? 1.0 : x[j - 1];
    for (Eigen::Index i = 0; i < d; ++i) out(i, j) = (-w * (i == 0 ? 1.0 : x[i - 1])) * zj;
  }
}

double LogisticGlmModel::mean_response(const Parameter& theta, std::span<const double> x) const {
  return sigmoid(linear_predictor(theta[0], theta.data() + 1, x));
}

double LogisticGlmModel::sample_response(const Parameter& theta, std::span<const double> x,
                                         double draw) const {
  require_draw(draw);
  return draw < mean_response(theta, x) ? 1.0 : 0.0;
}

// ---------------------------------------------------------------- Weibull

void WeibullAftModel::check_parameter(const Parameter& theta) const {
  check_length(theta);
  if (!(theta[0] > 0.0)) {
    throw NumericalError(NumericalFailure::InvalidParameter,
                         "Weibull shape must be positive, got " + std::to_string(theta[0]));
  }
}

void WeibullAftModel::check_observation(const Observation& obs) const {
  require_finite_covariates(obs, covariate_dim());
  if (!(obs.y > 0.0)) {
    throw InputError("Weibull response must be positive, got " + std::to_string(obs.y));
  }
}

double WeibullAftModel::log_density(const Parameter& theta, const Observation& obs) const {
  const double alpha = theta[0];
  if (!(alpha > 0.0)) check_parameter(theta);
  const double eta = linear_predictor(theta[1], theta.data() + 2, obs.x);
  const double log_y = std::log(obs.y);
  const double value = std::log(alpha) + (alpha - 1.0) * log_y + eta - std::exp(alpha * log_y + eta);
  require_finite(value, "Weibull log-density");
  return value;
}

void WeibullAftModel::score(const Parameter& theta, const Observation& obs,
                            Eigen::Ref<Vector> out) const {
  const double alpha = theta[0];
  if (!(alpha > 0.0)) check_parameter(theta);
  const double eta = linear_predictor(theta[1], theta.data() + 2, obs.x);
  const double log_y = std::log(obs.y);
  const double t = std::exp(alpha * log_y + eta);
  out[0] = 1.0 / alpha + log_y - t * log_y;
  const double w = 1.0 - t;
  out[1] = w;
  for (std::size_t j = 0; j < obs.x.size(); ++j) out[static_cast<Eigen::Index>(j) + 2] = w * obs.x[j];
}

void WeibullAftModel::score_jacobian(const Parameter& theta, const Observation& obs,
                                     Eigen::Ref<Matrix> out) const {
  const double alpha = theta[0];
  if (!(alpha > 0.0)) check_parameter(theta);
  const double eta = linear_predictor(theta[1], theta.data() + 2, obs.x);
  const double log_y = std::log(obs.y);
  const double t = std::exp(alpha * log_y + eta);
  const auto d = static_cast<Eigen::Index>(dim());
  Vector z(d - 1);
  augmented(obs.x, z);
  out(0, 0) = -1.0 / (alpha * alpha) - t * log_y * log_y;
  const Vector cross = -t * log_y * z;
  out.block(1, 0, d - 1, 1) = cross;
  out.block(0, 1, 1, d - 1) = cross.transpose();
  out.block(1, 1, d - 1, d - 1).noalias() = -t * z * z.transpose();
}

double WeibullAftModel::mean_response(const Parameter& theta, std::span<const double> x) const {
  check_parameter(theta);
  const double alpha = theta[0];
  const double eta = linear_predictor(theta[1], theta.data() + 2, x);
  return std::exp(-eta / alpha) * gamma_fn(1.0 + 1.0 / alpha);
}

double WeibullAftModel::sample_response(const Parameter& theta, std::span<const double> x,
                                        double draw) const {
  require_draw(draw);
  const double alpha = theta[0];
  if (!(alpha > 0.0)) check_parameter(theta);
  const double eta = linear_predictor(theta[1], theta.data() + 2, x);
  return std::pow(-std::log(draw), 1.0 / alpha) * std::exp(-eta / alpha);
}

Parameter WeibullAftModel::default_initial() const {
  Parameter theta = Parameter::Zero(static_cast<Eigen::Index>(dim()));
  theta[0] = 1.0;
  return theta;
}

std::unique_ptr<ConditionalModel> make_model(std::string_view name, std::size_t p) {
  if (name == "logistic") return std::make_unique<LogisticGlmModel>(p);
  if (name == "weibull") return std::make_unique<WeibullAftModel>(p);
  throw InputError("unknown model '" + std::string(name) + "' (expected logistic or weibull)");
}

}  // namespace massub
