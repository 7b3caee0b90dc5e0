#include "massub/elementary.hpp"
#include "massub/kernels.hpp"
#include "massub/rng.hpp"

#include <cmath>

namespace massub::kernels {
namespace {

void linear_predictor(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                      double intercept, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    double eta = intercept;
    for (std::size_t j = 0; j < cols; ++j) eta = eta + row[j] * beta[j];
    out[i] = eta;
  }
}

void weighted_column_sum(const double* x, std::size_t rows, std::size_t cols, const double* w,
                         double* acc) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    const double wi = w[i];
    for (std::size_t j = 0; j < cols; ++j) acc[j] = acc[j] + wi * row[j];
  }
}

std::size_t bernoulli_select(std::uint64_t key, std::size_t first, std::size_t count,
                             std::uint64_t threshold, std::size_t* out) {
  std::size_t written = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t index = first + i;
    if (bernoulli_accept(mix64_keyed(key, index), threshold)) out[written++] = index;
  }
  return written;
}

void logistic_residual(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                       double intercept, const double* y, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    double eta = intercept;
    for (std::size_t j = 0; j < cols; ++j) eta = eta + row[j] * beta[j];
    out[i] = y[i] - sigmoid_portable(eta);
  }
}

void logistic_score_norm(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                         double intercept, const double* y, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    double eta = intercept;
    double zz = 1.0;
    for (std::size_t j = 0; j < cols; ++j) {
      eta = eta + row[j] * beta[j];
      zz = zz + row[j] * row[j];
    }
    out[i] = std::abs(y[i] - sigmoid_portable(eta)) * std::sqrt(zz);
  }
}

std::size_t poisson_select(std::uint64_t key, std::size_t first, std::size_t count,
                           const double* prob, std::size_t* out) {
  std::size_t written = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t index = first + i;
    if (bernoulli_accept(mix64_keyed(key, index), bernoulli_threshold(prob[i]))) {
      out[written++] = index;
    }
  }
  return written;
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{"scalar", &linear_predictor, &weighted_column_sum,
                                 &bernoulli_select, &logistic_residual,
                                 &logistic_score_norm, &poisson_select};
  return table;
}

}  // namespace massub::kernels
