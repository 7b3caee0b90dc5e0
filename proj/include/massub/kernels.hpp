#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace massub::kernels {

// Row-streaming inner loops. Every variant performs the same floating-point
// operations in the same order (no FMA contraction), so all variants are
// bit-identical to the scalar reference; tests assert exact equality.
//
// Layout: x is row-major, `rows` x `cols`.

/// out[i] = intercept + sum_j x[i,j] * beta[j], summed in increasing j.
using LinearPredictorFn = void (*)(const double* x, std::size_t rows, std::size_t cols,
                                   const double* beta, double intercept, double* out);

/// acc[j] += sum_i w[i] * x[i,j], summed in increasing i.
using WeightedColumnSumFn = void (*)(const double* x, std::size_t rows, std::size_t cols,
                                     const double* w, double* acc);

/// Writes first+i for every i in [0,count) whose hash mix64_keyed(key, first+i)
/// passes bernoulli_accept(., threshold). Returns the number written.
using BernoulliSelectFn = std::size_t (*)(std::uint64_t key, std::size_t first, std::size_t count,
                                          std::uint64_t threshold, std::size_t* out);

/// out[i] = y[i] - sigmoid(eta_i), eta_i as in LinearPredictorFn, sigmoid as sigmoid_portable.
using LogisticResidualFn = void (*)(const double* x, std::size_t rows, std::size_t cols,
                                    const double* beta, double intercept, const double* y,
                                    double* out);

/// out[i] = |y[i] - sigmoid(eta_i)| * sqrt(1 + sum_j x[i,j]^2), the sum in increasing j.
using LogisticScoreNormFn = void (*)(const double* x, std::size_t rows, std::size_t cols,
                                     const double* beta, double intercept, const double* y,
                                     double* out);

/// Like BernoulliSelectFn with a per-record probability: record first+i is kept
/// when its hash passes bernoulli_threshold(prob[i]).
using PoissonSelectFn = std::size_t (*)(std::uint64_t key, std::size_t first, std::size_t count,
                                        const double* prob, std::size_t* out);

struct KernelTable {
  std::string_view name;
  LinearPredictorFn linear_predictor;
  WeightedColumnSumFn weighted_column_sum;
  BernoulliSelectFn bernoulli_select;
  LogisticResidualFn logistic_residual;
  LogisticScoreNormFn logistic_score_norm;
  PoissonSelectFn poisson_select;
};

const KernelTable& scalar_table() noexcept;

/// nullptr when the variant is not compiled in or the CPU lacks the instructions.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

/// Best available variant. MASSUB_KERNELS=scalar in the environment forces the reference.
const KernelTable& active() noexcept;

}  // namespace massub::kernels
