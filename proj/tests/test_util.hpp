#pragma once

#include "massub/dataset.hpp"
#include "massub/model.hpp"
#include "massub/rng.hpp"
#include "massub/types.hpp"

#include <cmath>
#include <vector>

namespace testutil {

using massub::Matrix;
using massub::Vector;

inline double uniform(std::uint64_t seed, std::uint64_t i, double lo, double hi) {
  return lo + (hi - lo) * massub::unit_open(massub::mix64(seed, i));
}

inline Vector random_vector(std::size_t n, std::uint64_t seed, double lo, double hi) {
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = uniform(seed, i, lo, hi);
  return v;
}

/// Valid random parameter for the model: Weibull shape in (0.4, 2).
inline Vector random_theta(const massub::ConditionalModel& model, std::uint64_t seed) {
  Vector t = random_vector(model.dim(), seed, -0.6, 0.6);
  if (model.family() == massub::ModelFamily::Weibull) t[0] = uniform(seed, 999, 0.4, 2.0);
  return t;
}

/// Response drawn from the model itself.
inline double random_response(const massub::ConditionalModel& model, const Vector& theta,
                              const std::vector<double>& x, std::uint64_t seed) {
  return model.sample_response(theta, x, massub::unit_open(massub::mix64(seed, 12345)));
}

inline double max_rel(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Small in-memory dataset drawn from the model with covariates in (-1, 1).
inline massub::Dataset make_data(const massub::ConditionalModel& model, const Vector& theta,
                                 std::size_t n, std::uint64_t seed) {
  const std::size_t p = model.covariate_dim();
  std::vector<double> x(n * p), y(n);
  for (std::size_t i = 0; i < n * p; ++i) x[i] = uniform(seed, i, -1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = model.sample_response(theta, std::span<const double>(x.data() + i * p, p),
                                 massub::unit_open(massub::mix64(seed + 1, i)));
  }
  return massub::Dataset(p, std::move(x), std::move(y));
}

}  // namespace testutil
