#include "massub/moments.hpp"

#include "massub/kernels.hpp"
#include "massub/numerics.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace massub {
namespace {

using Index = Eigen::Index;

Eigen::Map<const Vector> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Index>(x.size())};
}

// out = c z with z = (1, x)
void scaled_z(double c, std::span<const double> x, Eigen::Ref<Vector, 0, Eigen::InnerStride<>> out) {
  out[0] = c;
  out.tail(static_cast<Index>(x.size())) = c * as_vector(x);
}

// out = c z z^T with z = (1, x)
void scaled_zz(double c, std::span<const double> x, Eigen::Ref<Matrix> out) {
  const auto d = static_cast<Index>(x.size()) + 1;
  for (Index j = 0; j < d; ++j) {
    const double zj = j == 0 ? 1.0 : x[static_cast<std::size_t>(j - 1)];
    for (Index i = 0; i < d; ++i) out(i, j) = (c * (i == 0 ? 1.0 : x[static_cast<std::size_t>(i - 1)])) * zj;
  }
}

void require_same_family(const MomentFunction& h, const ConditionalModel& model) {
  if (h.kind() == MomentKind::OptimalScore && h.bound_model()->family() != model.family()) {
    throw InputError("optimal-score moment was built for a different model family");
  }
}

// Quantities shared by the Weibull optimal-score mean and its Jacobian.
struct WeibullScoreTerms {
  double alpha, eta, s, g, psi, e;
};

WeibullScoreTerms weibull_score_terms(const Parameter& theta, const Parameter& pilot,
                                      std::span<const double> x) {
  WeibullScoreTerms t{};
  t.alpha = theta[0];
  t.eta = linear_predictor(theta[1], theta.data() + 2, x);
  const double pilot_eta = linear_predictor(pilot[1], pilot.data() + 2, x);
  t.s = pilot[0] / t.alpha;
  t.g = std::tgamma(1.0 + t.s);
  t.e = std::exp(-t.eta * t.s + pilot_eta);
  if (!std::isfinite(t.g) || !std::isfinite(t.g * t.e)) {
    throw NumericalError(NumericalFailure::RangeError,
                         "Gamma(1 + pilot_alpha/alpha) term overflows at alpha = " +
                             std::to_string(t.alpha));
  }
  t.psi = digamma(1.0 + t.s);
  return t;
}

void base_cond_mean(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                    std::span<const double> x, Eigen::Ref<Vector> out) {
  model.check_parameter(theta);
  const bool logistic = model.family() == ModelFamily::Logistic;
  if (h.kind() == MomentKind::XY) {
    out = model.mean_response(theta, x) * as_vector(x);
    return;
  }
  const Parameter& pilot = h.pilot();
  if (logistic) {
    const double diff = sigmoid(linear_predictor(theta[0], theta.data() + 1, x)) -
                        sigmoid(linear_predictor(pilot[0], pilot.data() + 1, x));
    scaled_z(diff, x, out);
    return;
  }
  // E_theta[psi(x, Y; pilot)]: under theta, T = Y^alpha e^eta is unit exponential,
  // E[T^s] = Gamma(1+s) and E[T^s log T] = Gamma(1+s) Psi(1+s) with s = pilot_alpha / alpha.
  const auto t = weibull_score_terms(theta, pilot, x);
  out[0] = 1.0 / pilot[0] - (euler_gamma() + t.eta) / t.alpha - t.g * (t.psi - t.eta) * t.e / t.alpha;
  scaled_z(1.0 - t.g * t.e, x, out.tail(static_cast<Index>(x.size()) + 1));
}

void base_cond_mean_jac(const MomentFunction& h, const ConditionalModel& model,
                        const Parameter& theta, std::span<const double> x, Eigen::Ref<Matrix> out) {
  model.check_parameter(theta);
  const auto xv = as_vector(x);
  const auto p = static_cast<Index>(x.size());
  if (model.family() == ModelFamily::Logistic) {
    const double mu = sigmoid(linear_predictor(theta[0], theta.data() + 1, x));
    const double w = mu * (1.0 - mu);
    if (h.kind() == MomentKind::XY) {
      out.col(0) = w * xv;
      out.rightCols(p).noalias() = w * xv * xv.transpose();
    } else {
      scaled_zz(w, x, out);
    }
    return;
  }

  const double alpha = theta[0];
  if (h.kind() == MomentKind::XY) {
    const double eta = linear_predictor(theta[1], theta.data() + 2, x);
    const double mean = std::exp(-eta / alpha) * gamma_fn(1.0 + 1.0 / alpha);
    const double d_alpha = mean * (eta - digamma(1.0 + 1.0 / alpha)) / (alpha * alpha);
    out.col(0) = d_alpha * xv;
    out.col(1) = (-mean / alpha) * xv;
    out.rightCols(p).noalias() = (-mean / alpha) * xv * xv.transpose();
    return;
  }

  const auto t = weibull_score_terms(theta, h.pilot(), x);
  const double gap = t.psi - t.eta;
  const double ge = t.g * t.e;
  const double k = ge * gap / alpha;
  const double dk_dalpha = -(ge * t.s / (alpha * alpha)) * (gap * gap + trigamma(1.0 + t.s)) - k / alpha;
  const double dk_dbeta = (ge / alpha) * (-1.0 - t.s * gap);

  out(0, 0) = (euler_gamma() + t.eta) / (alpha * alpha) - dk_dalpha;
  scaled_z(-1.0 / alpha - dk_dbeta, x, out.block(0, 1, 1, p + 1).transpose());
  scaled_z(ge * t.s * gap / alpha, x, out.block(1, 0, p + 1, 1));
  scaled_zz(t.s * ge, x, out.block(1, 1, p + 1, p + 1));
}

// Pairwise reduction of leaf sums stored column-wise.
Vector pairwise_columns(Matrix& leaves, Index count) {
  while (count > 1) {
    const Index half = count / 2;
    for (Index i = 0; i < half; ++i) leaves.col(i) = leaves.col(2 * i) + leaves.col(2 * i + 1);
    if (count % 2 == 1) leaves.col(half) = leaves.col(count - 1);
    count = half + count % 2;
  }
  return leaves.col(0);
}

constexpr std::size_t kLeafRows = 64;

}  // namespace

MomentFunction MomentFunction::xy(std::size_t p) {
  if (p == 0) throw InputError("XY moment needs at least one covariate");
  MomentFunction h;
  h.kind_ = MomentKind::XY;
  h.q_ = h.base_q_ = p;
  return h;
}

MomentFunction MomentFunction::optimal_score(std::shared_ptr<const ConditionalModel> model,
                                             Parameter pilot) {
  if (!model) throw InputError("optimal-score moment needs a model");
  model->check_parameter(pilot);
  MomentFunction h;
  h.kind_ = MomentKind::OptimalScore;
  h.q_ = h.base_q_ = model->dim();
  h.model_ = std::move(model);
  h.pilot_ = std::move(pilot);
  return h;
}

MomentFunction MomentFunction::transformed(const Matrix& a) const {
  if (a.cols() != static_cast<Index>(q_) || a.rows() == 0) {
    throw InputError("moment transform has incompatible dimensions");
  }
  MomentFunction h = *this;
  h.transform_ = transform_ ? Matrix(a * *transform_) : a;
  h.q_ = static_cast<std::size_t>(a.rows());
  return h;
}

void MomentFunction::eval_h(const Observation& obs, Eigen::Ref<Vector> out) const {
  if (!transform_) {
    if (kind_ == MomentKind::XY) {
      out = obs.y * as_vector(obs.x);
    } else {
      model_->score(pilot_, obs, out);
    }
    return;
  }
  Vector base(static_cast<Index>(base_q_));
  if (kind_ == MomentKind::XY) {
    base = obs.y * as_vector(obs.x);
  } else {
    model_->score(pilot_, obs, base);
  }
  if (transform_) {
    out.noalias() = *transform_ * base;
  } else {
    out = base;
  }
}

Vector MomentFunction::eval_h(const Observation& obs) const {
  Vector out(static_cast<Index>(q_));
  eval_h(obs, out);
  return out;
}

void cond_mean(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
               std::span<const double> x, Eigen::Ref<Vector> out) {
  require_same_family(h, model);
  if (!h.transform()) {
    base_cond_mean(h, model, theta, x, out);
    return;
  }
  Vector base(h.transform()->cols());
  base_cond_mean(h, model, theta, x, base);
  out.noalias() = *h.transform() * base;
}

Vector cond_mean(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                 std::span<const double> x) {
  Vector out(static_cast<Index>(h.q()));
  cond_mean(h, model, theta, x, out);
  return out;
}

void cond_mean_jac(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                   std::span<const double> x, Eigen::Ref<Matrix> out) {
  require_same_family(h, model);
  if (!h.transform()) {
    base_cond_mean_jac(h, model, theta, x, out);
    return;
  }
  Matrix base(h.transform()->cols(), static_cast<Index>(model.dim()));
  base_cond_mean_jac(h, model, theta, x, base);
  out.noalias() = *h.transform() * base;
}

Matrix cond_mean_jac(const MomentFunction& h, const ConditionalModel& model, const Parameter& theta,
                     std::span<const double> x) {
  Matrix out(static_cast<Index>(h.q()), static_cast<Index>(model.dim()));
  cond_mean_jac(h, model, theta, x, out);
  return out;
}

WholeDataMoment whole_data_moment(const MomentFunction& h, const RecordSource& source,
                                  unsigned threads, bool use_kernels) {
  const std::size_t blocks = source.block_count();
  const Index base_q = h.transform() ? h.transform()->cols() : static_cast<Index>(h.q());
  std::vector<Vector> block_sums(blocks, Vector::Zero(base_q));
  std::vector<std::size_t> block_counts(blocks, 0);

  const bool xy_kernel = use_kernels && h.kind() == MomentKind::XY;
  const bool logistic_kernel = use_kernels && h.kind() == MomentKind::OptimalScore &&
                               h.bound_model()->family() == ModelFamily::Logistic;
  const auto& kern = kernels::active();

  source.scan(
      [&](const RowBlock& block) {
        if (block.count == 0) return;
        const std::size_t leaves = (block.count + kLeafRows - 1) / kLeafRows;
        Matrix leaf_sums = Matrix::Zero(base_q, static_cast<Index>(leaves));
        std::vector<double> weights(kLeafRows);
        Vector hv(base_q);
        for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
          const std::size_t begin = leaf * kLeafRows;
          const std::size_t rows = std::min(kLeafRows, block.count - begin);
          const double* x = block.x + begin * block.p;
          const double* y = block.y + begin;
          double* acc = leaf_sums.col(static_cast<Index>(leaf)).data();
          if (xy_kernel) {
            kern.weighted_column_sum(x, rows, block.p, y, acc);
          } else if (logistic_kernel) {
            const Parameter& pilot = h.pilot();
            kern.logistic_residual(x, rows, block.p, pilot.data() + 1, pilot[0], y, weights.data());
            double intercept = 0.0;
            for (std::size_t i = 0; i < rows; ++i) intercept = intercept + weights[i];
            acc[0] = intercept;
            kern.weighted_column_sum(x, rows, block.p, weights.data(), acc + 1);
          } else {
            for (std::size_t i = 0; i < rows; ++i) {
              const Observation obs{std::span<const double>(x + i * block.p, block.p), y[i]};
              if (h.kind() == MomentKind::XY) {
                for (Index j = 0; j < base_q; ++j) acc[j] = acc[j] + obs.x[static_cast<std::size_t>(j)] * obs.y;
              } else {
                h.bound_model()->score(h.pilot(), obs, hv);
                for (Index j = 0; j < base_q; ++j) acc[j] = acc[j] + hv[j];
              }
            }
          }
        }
        block_sums[block.block_id] = pairwise_columns(leaf_sums, static_cast<Index>(leaves));
        block_counts[block.block_id] = block.count;
      },
      threads);

  WholeDataMoment result;
  Vector total = Vector::Zero(base_q);
  for (std::size_t b = 0; b < blocks; ++b) {
    if (block_counts[b] == 0) continue;
    total += block_sums[b];
    result.count += block_counts[b];
  }
  if (result.count == 0) throw InputError("whole_data_moment: dataset is empty");
  total /= static_cast<double>(result.count);
  result.mu_hat = h.transform() ? Vector(*h.transform() * total) : total;
  if (!result.mu_hat.allFinite()) {
    throw NumericalError(NumericalFailure::RangeError, "whole_data_moment: non-finite moment");
  }
  return result;
}

MomentFunction build_optimal_moment(std::shared_ptr<const ConditionalModel> model,
                                    const Parameter& pilot) {
  return MomentFunction::optimal_score(std::move(model), pilot);
}

}  // namespace massub
