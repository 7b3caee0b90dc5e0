#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace massub {

// exp() built from IEEE add/mul only, so the scalar code and the vector kernels
// that mirror it operation by operation produce identical bits. Accurate to a
// couple of ulp on [-708, 709]; arguments outside are clamped.

inline constexpr double kExpLow = -708.0;
inline constexpr double kExpHigh = 709.0;
inline constexpr double kLog2e = 1.4426950408889634074;
inline constexpr double kLn2Hi = 6.93147180369123816490e-01;
inline constexpr double kLn2Lo = 1.90821492927058770002e-10;

/// 1/k! for k = 0..13; |r| <= ln2/2 leaves a truncation error below 1e-17.
inline constexpr double kExpTaylor[14] = {
    1.0,
    1.0,
    0.5,
    1.6666666666666666574e-01,
    4.1666666666666664354e-02,
    8.3333333333333332177e-03,
    1.3888888888888889419e-03,
    1.9841269841269841253e-04,
    2.4801587301587301566e-05,
    2.7557319223985892511e-06,
    2.7557319223985888276e-07,
    2.5052108385441720224e-08,
    2.0876756987868100187e-09,
    1.6059043836821613341e-10,
};

inline double exp_portable(double x) noexcept {
  if (x != x) return x;
  x = x < kExpLow ? kExpLow : x;
  x = x > kExpHigh ? kExpHigh : x;
  const double k = std::nearbyint(x * kLog2e);
  double r = x - k * kLn2Hi;
  r = r - k * kLn2Lo;
  double p = kExpTaylor[13];
  for (int i = 12; i >= 0; --i) p = p * r + kExpTaylor[i];
  const auto bits = static_cast<std::uint64_t>(static_cast<std::int64_t>(k) + 1023) << 52;
  return p * std::bit_cast<double>(bits);
}

/// Logistic function via exp(-|eta|); no overflow for any eta.
inline double sigmoid_portable(double eta) noexcept {
  const double e = exp_portable(-std::abs(eta));
  return (eta >= 0.0 ? 1.0 : e) / (1.0 + e);
}

}  // namespace massub
