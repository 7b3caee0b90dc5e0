#pragma once

#include "massub/elementary.hpp"
#include "massub/types.hpp"

#include <cmath>
#include <memory>
#include <string_view>

namespace massub {

enum class ModelFamily { Logistic, Weibull };

/// Parametric conditional density f(y | x; theta). Covariates are raw; the
/// intercept column is implicit. All member functions are pure and thread-safe.
class ConditionalModel {
 public:
  explicit ConditionalModel(std::size_t p) : p_(p) {}
  virtual ~ConditionalModel() = default;

  virtual ModelFamily family() const noexcept = 0;
  virtual std::string_view name() const noexcept = 0;
  /// Parameter dimension d.
  virtual std::size_t dim() const noexcept = 0;
  std::size_t covariate_dim() const noexcept { return p_; }

  /// Throws NumericalError(InvalidParameter) on a wrong length or an invalid value.
  virtual void check_parameter(const Parameter& theta) const = 0;
  /// Throws InputError for non-finite data or a response outside the support.
  virtual void check_observation(const Observation& obs) const = 0;

  virtual double log_density(const Parameter& theta, const Observation& obs) const = 0;
  virtual void score(const Parameter& theta, const Observation& obs, Eigen::Ref<Vector> out) const = 0;
  virtual void score_jacobian(const Parameter& theta, const Observation& obs,
                              Eigen::Ref<Matrix> out) const = 0;
  virtual double mean_response(const Parameter& theta, std::span<const double> x) const = 0;
  /// Inverse-CDF draw; `draw` must lie in (0,1).
  virtual double sample_response(const Parameter& theta, std::span<const double> x,
                                 double draw) const = 0;
  /// Starting point for Newton when no pilot estimate is available.
  virtual Parameter default_initial() const = 0;
  /// True for models whose sampled conditional likelihood has a closed form.
  virtual bool supports_mscl() const noexcept = 0;

  Vector score(const Parameter& theta, const Observation& obs) const {
    Vector out(static_cast<Eigen::Index>(dim()));
    score(theta, obs, out);
    return out;
  }
  Matrix score_jacobian(const Parameter& theta, const Observation& obs) const {
    Matrix out(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(dim()));
    score_jacobian(theta, obs, out);
    return out;
  }

 protected:
  void check_length(const Parameter& theta) const;

 private:
  std::size_t p_;
};

/// Bernoulli response with canonical (logit) link; theta = (intercept, slopes), d = p + 1.
class LogisticGlmModel final : public ConditionalModel {
 public:
  explicit LogisticGlmModel(std::size_t p) : ConditionalModel(p) {}

  ModelFamily family() const noexcept override { return ModelFamily::Logistic; }
  std::string_view name() const noexcept override { return "logistic"; }
  std::size_t dim() const noexcept override { return covariate_dim() + 1; }
  void check_parameter(const Parameter& theta) const override;
  void check_observation(const Observation& obs) const override;
  double log_density(const Parameter& theta, const Observation& obs) const override;
  void score(const Parameter& theta, const Observation& obs, Eigen::Ref<Vector> out) const override;
  void score_jacobian(const Parameter& theta, const Observation& obs,
                      Eigen::Ref<Matrix> out) const override;
  double mean_response(const Parameter& theta, std::span<const double> x) const override;
  double sample_response(const Parameter& theta, std::span<const double> x,
                         double draw) const override;
  Parameter default_initial() const override { return Parameter::Zero(dim()); }
  bool supports_mscl() const noexcept override { return true; }

  using ConditionalModel::score;
  using ConditionalModel::score_jacobian;
};

/// Accelerated-failure-time Weibull: Y = W exp(-(1,x)beta / alpha), W ~ Weibull(alpha, 1).
/// theta = (alpha, beta_0, beta_1..beta_p), d = p + 2. With eta = (1,x)beta the density is
///   f(y) = alpha y^(alpha-1) e^eta exp(-y^alpha e^eta).
class WeibullAftModel final : public ConditionalModel {
 public:
  explicit WeibullAftModel(std::size_t p) : ConditionalModel(p) {}

  ModelFamily family() const noexcept override { return ModelFamily::Weibull; }
  std::string_view name() const noexcept override { return "weibull"; }
  std::size_t dim() const noexcept override { return covariate_dim() + 2; }
  void check_parameter(const Parameter& theta) const override;
  void check_observation(const Observation& obs) const override;
  double log_density(const Parameter& theta, const Observation& obs) const override;
  void score(const Parameter& theta, const Observation& obs, Eigen::Ref<Vector> out) const override;
  void score_jacobian(const Parameter& theta, const Observation& obs,
                      Eigen::Ref<Matrix> out) const override;
  double mean_response(const Parameter& theta, std::span<const double> x) const override;
  double sample_response(const Parameter& theta, std::span<const double> x,
                         double draw) const override;
  Parameter default_initial() const override;
  bool supports_mscl() const noexcept override { return false; }

  using ConditionalModel::score;
  using ConditionalModel::score_jacobian;
};

/// "logistic" or "weibull"; throws InputError otherwise.
std::unique_ptr<ConditionalModel> make_model(std::string_view name, std::size_t p);

// Shared scalar helpers.

/// intercept + sum_j coef[j] x[j], accumulated in increasing j (matches the row kernels).
inline double linear_predictor(double intercept, const double* coef, std::span<const double> x) noexcept {
  double eta = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) eta = eta + x[j] * coef[j];
  return eta;
}

/// Same bits as the vector kernels' sigmoid.
inline double sigmoid(double eta) noexcept { return sigmoid_portable(eta); }

/// log(1 + e^eta) without overflow.
inline double log1p_exp(double eta) noexcept {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

/// Linear predictor of a model at x: logistic uses theta[0..], Weibull theta[1..].
double model_linear_predictor(const ConditionalModel& model, const Parameter& theta,
                              std::span<const double> x) noexcept;

}  // namespace massub
