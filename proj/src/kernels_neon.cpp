#include "massub/kernels.hpp"
#include "massub/rng.hpp"

#include <arm_neon.h>

namespace massub::kernels {
namespace {

void linear_predictor(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                      double intercept, double* out) {
  std::size_t i = 0;
  for (; i + 2 <= rows; i += 2) {
    const double* r0 = x + i * cols;
    const double* r1 = r0 + cols;
    float64x2_t acc = vdupq_n_f64(intercept);
    for (std::size_t j = 0; j < cols; ++j) {
      const double pair[2] = {r0[j], r1[j]};
      acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(pair), vdupq_n_f64(beta[j])));
    }
    vst1q_f64(out + i, acc);
  }
  for (; i < rows; ++i) {
    const double* row = x + i * cols;
    double eta = intercept;
    for (std::size_t j = 0; j < cols; ++j) eta = eta + row[j] * beta[j];
    out[i] = eta;
  }
}

void weighted_column_sum(const double* x, std::size_t rows, std::size_t cols, const double* w,
                         double* acc) {
  std::size_t j = 0;
  for (; j + 2 <= cols; j += 2) {
    float64x2_t a = vld1q_f64(acc + j);
    for (std::size_t i = 0; i < rows; ++i) {
      a = vaddq_f64(a, vmulq_f64(vdupq_n_f64(w[i]), vld1q_f64(x + i * cols + j)));
    }
    vst1q_f64(acc + j, a);
  }
  for (; j < cols; ++j) {
    double a = acc[j];
    for (std::size_t i = 0; i < rows; ++i) a = a + w[i] * x[i * cols + j];
    acc[j] = a;
  }
}

std::size_t bernoulli_select(std::uint64_t key, std::size_t first, std::size_t count,
                             std::uint64_t threshold, std::size_t* out) {
  // NEON lacks a 64-bit lane multiply; the hash stays scalar.
  std::size_t written = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t index = first + i;
    if (bernoulli_accept(mix64_keyed(key, index), threshold)) out[written++] = index;
  }
  return written;
}

}  // namespace

const KernelTable* neon_table() noexcept {
  // Residual, norm and select reuse the scalar loops (exp and the hash stay scalar here).
  static const KernelTable table{"neon",
                                 &linear_predictor,
                                 &weighted_column_sum,
                                 &bernoulli_select,
                                 scalar_table().logistic_residual,
                                 scalar_table().logistic_score_norm,
                                 scalar_table().poisson_select};
  return &table;
}

}  // namespace massub::kernels
