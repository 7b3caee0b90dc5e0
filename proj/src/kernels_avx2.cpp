// Compiled with -mavx2; only reached after a runtime CPUID check.
#include "massub/elementary.hpp"
#include "massub/kernels.hpp"
#include "massub/rng.hpp"

#include <immintrin.h>

namespace massub::kernels {
namespace {

// out[k] = column k of the 4 x 4 tile at p (row stride `stride`).
inline void transpose4(const double* p, std::size_t stride, __m256d out[4]) {
  const __m256d a = _mm256_loadu_pd(p);
  const __m256d b = _mm256_loadu_pd(p + stride);
  const __m256d c = _mm256_loadu_pd(p + 2 * stride);
  const __m256d d = _mm256_loadu_pd(p + 3 * stride);
  const __m256d t0 = _mm256_unpacklo_pd(a, b);
  const __m256d t1 = _mm256_unpackhi_pd(a, b);
  const __m256d t2 = _mm256_unpacklo_pd(c, d);
  const __m256d t3 = _mm256_unpackhi_pd(c, d);
  out[0] = _mm256_permute2f128_pd(t0, t2, 0x20);
  out[1] = _mm256_permute2f128_pd(t1, t3, 0x20);
  out[2] = _mm256_permute2f128_pd(t0, t2, 0x31);
  out[3] = _mm256_permute2f128_pd(t1, t3, 0x31);
}

inline __m256d column4(const double* p, std::size_t stride) {
  return _mm256_set_pd(p[3 * stride], p[2 * stride], p[stride], p[0]);
}

// Calls f(j, column j of rows 0..3) for j = 0..cols-1 in order.
template <class F>
inline void columns4(const double* base, std::size_t cols, F&& f) {
  std::size_t j = 0;
  __m256d t[4];
  for (; j + 4 <= cols; j += 4) {
    transpose4(base + j, cols, t);
    for (int k = 0; k < 4; ++k) f(j + k, t[k]);
  }
  for (; j < cols; ++j) f(j, column4(base + j, cols));
}

// Same for rows 0..7: f(j, rows 0..3, rows 4..7). Two independent chains per
// column hide the add latency.
template <class F>
inline void columns8(const double* base, std::size_t cols, F&& f) {
  const double* upper = base + 4 * cols;
  std::size_t j = 0;
  __m256d lo[4], hi[4];
  for (; j + 4 <= cols; j += 4) {
    transpose4(base + j, cols, lo);
    transpose4(upper + j, cols, hi);
    for (int k = 0; k < 4; ++k) f(j + k, lo[k], hi[k]);
  }
  for (; j < cols; ++j) f(j, column4(base + j, cols), column4(upper + j, cols));
}

void linear_predictor(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                      double intercept, double* out) {
  std::size_t i = 0;
  // Per row the sum runs over j in the same order as the scalar loop.
  for (; i + 8 <= rows; i += 8) {
    __m256d e0 = _mm256_set1_pd(intercept);
    __m256d e1 = e0;
    columns8(x + i * cols, cols, [&](std::size_t j, __m256d a, __m256d b) {
      const __m256d bj = _mm256_set1_pd(beta[j]);
      e0 = _mm256_add_pd(e0, _mm256_mul_pd(a, bj));
      e1 = _mm256_add_pd(e1, _mm256_mul_pd(b, bj));
    });
    _mm256_storeu_pd(out + i, e0);
    _mm256_storeu_pd(out + i + 4, e1);
  }
  for (; i + 4 <= rows; i += 4) {
    __m256d acc = _mm256_set1_pd(intercept);
    columns4(x + i * cols, cols, [&](std::size_t j, __m256d xv) {
      acc = _mm256_add_pd(acc, _mm256_mul_pd(xv, _mm256_set1_pd(beta[j])));
    });
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < rows; ++i) {
    const double* row = x + i * cols;
    double eta = intercept;
    for (std::size_t j = 0; j < cols; ++j) eta = eta + row[j] * beta[j];
    out[i] = eta;
  }
}

// V four-column chunks plus T single columns, all advanced in one pass over the
// rows so their add chains overlap. Each column still sums in increasing i.
template <int V, int T>
void column_group(const double* x, std::size_t rows, std::size_t cols, const double* w,
                  double* acc) {
  __m256d a[V > 0 ? V : 1];
  double s[T > 0 ? T : 1];
  for (int k = 0; k < V; ++k) a[k] = _mm256_loadu_pd(acc + 4 * k);
  for (int t = 0; t < T; ++t) s[t] = acc[4 * V + t];
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = x + i * cols;
    const double wi = w[i];
    const __m256d wv = _mm256_set1_pd(wi);
    for (int k = 0; k < V; ++k) a[k] = _mm256_add_pd(a[k], _mm256_mul_pd(wv, _mm256_loadu_pd(row + 4 * k)));
    for (int t = 0; t < T; ++t) s[t] = s[t] + wi * row[4 * V + t];
  }
  for (int k = 0; k < V; ++k) _mm256_storeu_pd(acc + 4 * k, a[k]);
  for (int t = 0; t < T; ++t) acc[4 * V + t] = s[t];
}

using ColumnGroupFn = void (*)(const double*, std::size_t, std::size_t, const double*, double*);

constexpr ColumnGroupFn kColumnGroups[5][4] = {
    {nullptr, &column_group<0, 1>, &column_group<0, 2>, &column_group<0, 3>},
    {&column_group<1, 0>, &column_group<1, 1>, &column_group<1, 2>, &column_group<1, 3>},
    {&column_group<2, 0>, &column_group<2, 1>, &column_group<2, 2>, &column_group<2, 3>},
    {&column_group<3, 0>, &column_group<3, 1>, &column_group<3, 2>, &column_group<3, 3>},
    {&column_group<4, 0>, &column_group<4, 1>, &column_group<4, 2>, &column_group<4, 3>},
};

void weighted_column_sum(const double* x, std::size_t rows, std::size_t cols, const double* w,
                         double* acc) {
  std::size_t j = 0;
  for (; cols - j > 19; j += 16) column_group<4, 0>(x + j, rows, cols, w, acc + j);
  const std::size_t left = cols - j;
  if (left > 0) kColumnGroups[left / 4][left % 4](x + j, rows, cols, w, acc + j);
}

inline __m256i mullo64(__m256i a, __m256i b) {
  const __m256i lo = _mm256_mul_epu32(a, b);
  const __m256i cross = _mm256_add_epi64(_mm256_mul_epu32(_mm256_srli_epi64(a, 32), b),
                                         _mm256_mul_epu32(a, _mm256_srli_epi64(b, 32)));
  return _mm256_add_epi64(lo, _mm256_slli_epi64(cross, 32));
}

inline __m256i finalize(__m256i z) {
  const __m256i c1 = _mm256_set1_epi64x(static_cast<long long>(0xbf58476d1ce4e5b9ULL));
  const __m256i c2 = _mm256_set1_epi64x(static_cast<long long>(0x94d049bb133111ebULL));
  z = mullo64(_mm256_xor_si256(z, _mm256_srli_epi64(z, 30)), c1);
  z = mullo64(_mm256_xor_si256(z, _mm256_srli_epi64(z, 27)), c2);
  return _mm256_xor_si256(z, _mm256_srli_epi64(z, 31));
}

std::size_t bernoulli_select(std::uint64_t key, std::size_t first, std::size_t count,
                             std::uint64_t threshold, std::size_t* out) {
  const __m256i gamma = _mm256_set1_epi64x(static_cast<long long>(kGoldenGamma));
  const __m256i keyv = _mm256_set1_epi64x(static_cast<long long>(key));
  const __m256i limit = _mm256_set1_epi64x(static_cast<long long>(threshold));
  const __m256i step = _mm256_set1_epi64x(4);
  // counter = index + 1
  __m256i counter = _mm256_set_epi64x(static_cast<long long>(first + 4),
                                      static_cast<long long>(first + 3),
                                      static_cast<long long>(first + 2),
                                      static_cast<long long>(first + 1));
  std::size_t written = 0;
  std::size_t i = 0;
  for (; i + 4 <= count; i += 4) {
    const __m256i h = finalize(_mm256_add_epi64(keyv, mullo64(counter, gamma)));
    // (h >> 12) < 2^52 and threshold <= 2^52, so the signed compare is exact.
    const __m256i accept = _mm256_cmpgt_epi64(limit, _mm256_srli_epi64(h, 12));
    int mask = _mm256_movemask_pd(_mm256_castsi256_pd(accept));
    while (mask != 0) {
      const int lane = __builtin_ctz(static_cast<unsigned>(mask));
      out[written++] = first + i + static_cast<std::size_t>(lane);
      mask &= mask - 1;
    }
    counter = _mm256_add_epi64(counter, step);
  }
  for (; i < count; ++i) {
    const std::size_t index = first + i;
    if (bernoulli_accept(mix64_keyed(key, index), threshold)) out[written++] = index;
  }
  return written;
}

// Lane-wise mirror of exp_portable. max/min return their second operand for NaN,
// so NaN flows through like the scalar early return.
inline __m256d exp_pd(__m256d x) {
  x = _mm256_max_pd(_mm256_set1_pd(kExpLow), x);
  x = _mm256_min_pd(_mm256_set1_pd(kExpHigh), x);
  const __m256d k = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2e)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(k, _mm256_set1_pd(kLn2Hi)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(k, _mm256_set1_pd(kLn2Lo)));
  __m256d p = _mm256_set1_pd(kExpTaylor[13]);
  for (int i = 12; i >= 0; --i) {
    p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(kExpTaylor[i]));
  }
  const __m256i n = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(k));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

inline __m256d sigmoid_pd(__m256d eta) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d e = exp_pd(_mm256_or_pd(_mm256_andnot_pd(sign, eta), sign));
  const __m256d nonneg = _mm256_cmp_pd(eta, _mm256_setzero_pd(), _CMP_GE_OQ);
  return _mm256_div_pd(_mm256_blendv_pd(e, one, nonneg), _mm256_add_pd(one, e));
}

void logistic_residual(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                       double intercept, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 8 <= rows; i += 8) {
    __m256d e0 = _mm256_set1_pd(intercept);
    __m256d e1 = e0;
    columns8(x + i * cols, cols, [&](std::size_t j, __m256d a, __m256d b) {
      const __m256d bj = _mm256_set1_pd(beta[j]);
      e0 = _mm256_add_pd(e0, _mm256_mul_pd(a, bj));
      e1 = _mm256_add_pd(e1, _mm256_mul_pd(b, bj));
    });
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(y + i), sigmoid_pd(e0)));
    _mm256_storeu_pd(out + i + 4, _mm256_sub_pd(_mm256_loadu_pd(y + i + 4), sigmoid_pd(e1)));
  }
  for (; i + 4 <= rows; i += 4) {
    __m256d eta = _mm256_set1_pd(intercept);
    columns4(x + i * cols, cols, [&](std::size_t j, __m256d xv) {
      eta = _mm256_add_pd(eta, _mm256_mul_pd(xv, _mm256_set1_pd(beta[j])));
    });
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(y + i), sigmoid_pd(eta)));
  }
  if (i < rows) scalar_table().logistic_residual(x + i * cols, rows - i, cols, beta, intercept,
                                                 y + i, out + i);
}

void logistic_score_norm(const double* x, std::size_t rows, std::size_t cols, const double* beta,
                         double intercept, const double* y, double* out) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 8 <= rows; i += 8) {
    __m256d e0 = _mm256_set1_pd(intercept);
    __m256d e1 = e0;
    __m256d z0 = _mm256_set1_pd(1.0);
    __m256d z1 = z0;
    columns8(x + i * cols, cols, [&](std::size_t j, __m256d a, __m256d b) {
      const __m256d bj = _mm256_set1_pd(beta[j]);
      e0 = _mm256_add_pd(e0, _mm256_mul_pd(a, bj));
      e1 = _mm256_add_pd(e1, _mm256_mul_pd(b, bj));
      z0 = _mm256_add_pd(z0, _mm256_mul_pd(a, a));
      z1 = _mm256_add_pd(z1, _mm256_mul_pd(b, b));
    });
    const __m256d r0 = _mm256_sub_pd(_mm256_loadu_pd(y + i), sigmoid_pd(e0));
    const __m256d r1 = _mm256_sub_pd(_mm256_loadu_pd(y + i + 4), sigmoid_pd(e1));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_andnot_pd(sign, r0), _mm256_sqrt_pd(z0)));
    _mm256_storeu_pd(out + i + 4, _mm256_mul_pd(_mm256_andnot_pd(sign, r1), _mm256_sqrt_pd(z1)));
  }
  for (; i + 4 <= rows; i += 4) {
    __m256d eta = _mm256_set1_pd(intercept);
    __m256d zz = _mm256_set1_pd(1.0);
    columns4(x + i * cols, cols, [&](std::size_t j, __m256d xv) {
      eta = _mm256_add_pd(eta, _mm256_mul_pd(xv, _mm256_set1_pd(beta[j])));
      zz = _mm256_add_pd(zz, _mm256_mul_pd(xv, xv));
    });
    const __m256d res = _mm256_sub_pd(_mm256_loadu_pd(y + i), sigmoid_pd(eta));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_andnot_pd(sign, res), _mm256_sqrt_pd(zz)));
  }
  if (i < rows) scalar_table().logistic_score_norm(x + i * cols, rows - i, cols, beta, intercept,
                                                   y + i, out + i);
}

std::size_t poisson_select(std::uint64_t key, std::size_t first, std::size_t count,
                           const double* prob, std::size_t* out) {
  const __m256i gamma = _mm256_set1_epi64x(static_cast<long long>(kGoldenGamma));
  const __m256i keyv = _mm256_set1_epi64x(static_cast<long long>(key));
  const __m256i step = _mm256_set1_epi64x(4);
  const __m256i exponent = _mm256_set1_epi64x(0x4330000000000000LL);
  const __m256d two52 = _mm256_set1_pd(4503599627370496.0);
  const __m256d half = _mm256_set1_pd(0.5);
  __m256i counter = _mm256_set_epi64x(static_cast<long long>(first + 4),
                                      static_cast<long long>(first + 3),
                                      static_cast<long long>(first + 2),
                                      static_cast<long long>(first + 1));
  std::size_t written = 0;
  std::size_t i = 0;
  // m < ceil(t) iff m < t for integer m, with t = p * 2^52 - 0.5 rounded as in
  // bernoulli_threshold; p >= 1 and p <= 0 fall out of the same compare.
  for (; i + 4 <= count; i += 4) {
    const __m256i h = finalize(_mm256_add_epi64(keyv, mullo64(counter, gamma)));
    const __m256d m = _mm256_sub_pd(
        _mm256_castsi256_pd(_mm256_or_si256(_mm256_srli_epi64(h, 12), exponent)), two52);
    const __m256d t = _mm256_sub_pd(_mm256_mul_pd(_mm256_loadu_pd(prob + i), two52), half);
    int mask = _mm256_movemask_pd(_mm256_cmp_pd(m, t, _CMP_LT_OQ));
    while (mask != 0) {
      const int lane = __builtin_ctz(static_cast<unsigned>(mask));
      out[written++] = first + i + static_cast<std::size_t>(lane);
      mask &= mask - 1;
    }
    counter = _mm256_add_epi64(counter, step);
  }
  if (i < count) written += scalar_table().poisson_select(key, first + i, count - i, prob + i,
                                                          out + written);
  return written;
}

}  // namespace

const KernelTable* avx2_table() noexcept {
  static const KernelTable table{"avx2",          &linear_predictor,    &weighted_column_sum,
                                 &bernoulli_select, &logistic_residual, &logistic_score_norm,
                                 &poisson_select};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace massub::kernels
