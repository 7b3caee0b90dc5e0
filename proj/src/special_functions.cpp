#include "massub/numerics.hpp"

#include <cmath>
#include <string>

namespace massub {
namespace {

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw InputError(std::string(name) + ": argument must be finite and positive, got " +
                     std::to_string(x));
  }
}

constexpr double kAsymptoticFrom = 10.0;

}  // namespace

double gamma_fn(double x) {
  require_positive(x, "gamma");
  return std::tgamma(x);
}

double log_gamma(double x) {
  require_positive(x, "log_gamma");
  return std::lgamma(x);
}

double digamma(double x) {
  require_positive(x, "digamma");
  double shift = 0.0;
  while (x < kAsymptoticFrom) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  // Bernoulli-number series: -sum B_2k / (2k x^2k), k = 1..7
  const double series =
      r * (-1.0 / 12 +
           r * (1.0 / 120 +
                r * (-1.0 / 252 +
                     r * (1.0 / 240 + r * (-1.0 / 132 + r * (691.0 / 32760 + r * (-1.0 / 12)))))));
  return shift + std::log(x) - 0.5 / x + series;
}

double trigamma(double x) {
  require_positive(x, "trigamma");
  double shift = 0.0;
  while (x < kAsymptoticFrom) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double r = inv * inv;
  // 1/x + 1/(2x^2) + sum B_2k / x^(2k+1), k = 1..7
  const double series =
      inv * r *
      (1.0 / 6 +
       r * (-1.0 / 30 +
            r * (1.0 / 42 + r * (-1.0 / 30 + r * (5.0 / 66 + r * (-691.0 / 2730 + r * (7.0 / 6)))))));
  return shift + inv + 0.5 * r + series;
}

}  // namespace massub
