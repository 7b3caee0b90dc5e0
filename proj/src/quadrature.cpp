#include "massub/numerics.hpp"

#include <array>
#include <cmath>
#include <queue>
#include <vector>

namespace massub {
namespace {

// Kronrod 15-point abscissae (descending, last is the centre) and weights;
// Gauss 7-point weights for the odd-indexed Kronrod nodes.
constexpr std::array<double, 8> kNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a = 0.0;
  double b = 0.0;
  int depth = 0;
  Vector value;
  double error = 0.0;
};

struct ByError {
  bool operator()(const Segment& l, const Segment& r) const { return l.error < r.error; }
};

Segment kronrod(const std::function<void(double, Vector&)>& f, std::size_t dim, double a, double b,
                int depth, Vector& scratch) {
  const double centre = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  Vector kron = Vector::Zero(static_cast<Eigen::Index>(dim));
  Vector gauss = Vector::Zero(static_cast<Eigen::Index>(dim));

  f(centre, scratch);
  kron += kKronrodWeights[7] * scratch;
  gauss += kGaussWeights[3] * scratch;
  for (std::size_t k = 0; k < 7; ++k) {
    const double dx = half * kNodes[k];
    f(centre - dx, scratch);
    Vector pair = scratch;
    f(centre + dx, scratch);
    pair += scratch;
    kron += kKronrodWeights[k] * pair;
    if (k % 2 == 1) gauss += kGaussWeights[k / 2] * pair;
  }
  Segment s;
  s.a = a;
  s.b = b;
  s.depth = depth;
  s.value = half * kron;
  s.error = half * (kron - gauss).cwiseAbs().maxCoeff();
  if (!s.value.allFinite()) {
    throw NumericalError(NumericalFailure::QuadratureNonConvergence,
                         "integrate: non-finite integrand value");
  }
  return s;
}

}  // namespace

QuadratureResult integrate(const std::function<void(double, Vector&)>& f, std::size_t dim,
                           double a, double b, const QuadratureOptions& options) {
  Vector scratch(static_cast<Eigen::Index>(dim));
  std::priority_queue<Segment, std::vector<Segment>, ByError> queue;
  queue.push(kronrod(f, dim, a, b, 0, scratch));
  double total_error = queue.top().error;

  while (total_error > options.abs_tol) {
    Segment worst = queue.top();
    if (worst.depth >= options.max_depth || queue.size() >= options.max_intervals) {
      throw NumericalError(NumericalFailure::QuadratureNonConvergence,
                           "integrate: refinement limit reached with error estimate " +
                               std::to_string(total_error));
    }
    queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    Segment left = kronrod(f, dim, worst.a, mid, worst.depth + 1, scratch);
    Segment right = kronrod(f, dim, mid, worst.b, worst.depth + 1, scratch);
    total_error += left.error + right.error - worst.error;
    queue.push(std::move(left));
    queue.push(std::move(right));
    if (total_error <= options.abs_tol) {
      // Guard against drift in the running total.
      double exact = 0.0;
      auto copy = queue;
      while (!copy.empty()) {
        exact += copy.top().error;
        copy.pop();
      }
      total_error = exact;
    }
  }

  QuadratureResult result;
  result.value = Vector::Zero(static_cast<Eigen::Index>(dim));
  result.error_estimate = total_error;
  result.intervals = queue.size();
  // Sum smallest contributions first.
  std::vector<Segment> segments;
  segments.reserve(queue.size());
  while (!queue.empty()) {
    segments.push_back(queue.top());
    queue.pop();
  }
  for (auto it = segments.rbegin(); it != segments.rend(); ++it) result.value += it->value;
  return result;
}

}  // namespace massub
