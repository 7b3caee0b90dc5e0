#pragma once

#include "massub/dataset.hpp"
#include "massub/model.hpp"
#include "massub/types.hpp"

#include <memory>
#include <optional>

namespace massub {

enum class MomentKind {
  /// h(x,y) = x * y, q = p.
  XY,
  /// h(x,y) = psi(x,y; pilot), q = d.
  OptimalScore,
};

/// q-dimensional moment vector h(x,y), optionally recombined as A h.
class MomentFunction {
 public:
  static MomentFunction xy(std::size_t p);
  static MomentFunction optimal_score(std::shared_ptr<const ConditionalModel> model, Parameter pilot);

  /// Returns the moment A h for an invertible q x q matrix A.
  MomentFunction transformed(const Matrix& a) const;

  MomentKind kind() const noexcept { return kind_; }
  std::size_t q() const noexcept { return q_; }
  const Parameter& pilot() const noexcept { return pilot_; }
  const std::optional<Matrix>& transform() const noexcept { return transform_; }
  const ConditionalModel* bound_model() const noexcept { return model_.get(); }

  void eval_h(const Observation& obs, Eigen::Ref<Vector> out) const;
  Vector eval_h(const Observation& obs) const;

 private:
  MomentFunction() = default;

  MomentKind kind_ = MomentKind::XY;
  std::size_t q_ = 0;
  std::size_t base_q_ = 0;
  std::shared_ptr<const ConditionalModel> model_;
  Parameter pilot_;
  std::optional<Matrix> transform_;
};

/// m(x; theta) = integral of h(x,y) f(y|x;theta) dy, in closed form for every
/// supported (moment, model) pair. Weibull optimal-score means throw
/// NumericalError(RangeError) if Gamma(1 + pilot_alpha/alpha) overflows.
void cond_mean(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
               std::span<const double> x, Eigen::Ref<Vector> out);
Vector cond_mean(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                 std::span<const double> x);

/// d m / d theta^T, q x d.
void cond_mean_jac(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                   std::span<const double> x, Eigen::Ref<Matrix> out);
Matrix cond_mean_jac(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                     std::span<const double> x);

struct WholeDataMoment {
  Vector mu_hat;
  std::size_t count = 0;
};

/// mu_hat = N^-1 sum h(X_i, Y_i) in one streaming pass. Each block is summed
/// pairwise over fixed leaves; blocks are combined left to right, so the result
/// does not depend on the thread count. Throws InputError on an empty source.
WholeDataMoment whole_data_moment(const MomentFunction& h, const RecordSource& source,
                                  unsigned threads = 1, bool use_kernels = true);

/// Estimated optimal moment: the score evaluated at the pilot estimate.
MomentFunction build_optimal_moment(std::shared_ptr<const ConditionalModel> model,
                                    const Parameter& pilot);

}  // namespace massub
