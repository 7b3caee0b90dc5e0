#include "doctest.h"

#include "massub/moments.hpp"
#include "massub/numerics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

using namespace massub;
using testutil::max_rel;

namespace {

std::vector<double> random_x(std::size_t p, std::uint64_t seed) {
  std::vector<double> x(p);
  for (std::size_t j = 0; j < p; ++j) x[j] = testutil::uniform(seed, j, -1.5, 1.5);
  return x;
}

}  // namespace

TEST_CASE("eval_h examples") {
  const auto xy = MomentFunction::xy(2);
  const std::vector<double> x = {1.0, 3.0};
  const Vector h = xy.eval_h(Observation{x, 2.0});
  CHECK(h[0] == 2.0);
  CHECK(h[1] == 6.0);
  CHECK(xy.eval_h(Observation{x, 0.0}).norm() == 0.0);
  CHECK(xy.q() == 2);

  auto model = std::make_shared<LogisticGlmModel>(1);
  const auto opt = MomentFunction::optimal_score(model, Vector::Zero(2));
  const std::vector<double> x1 = {1.0};
  const Vector s = opt.eval_h(Observation{x1, 1.0});
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
}

TEST_CASE("cond_mean and cond_mean_jac examples") {
  LogisticGlmModel lg(2);
  const std::vector<double> x = {1.0, 1.0};
  const Vector m = cond_mean(MomentFunction::xy(2), lg, Vector::Zero(3), x);
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.5);

  auto lg0 = std::make_shared<LogisticGlmModel>(0);
  const auto opt = MomentFunction::optimal_score(lg0, Vector::Zero(1));
  const Matrix j = cond_mean_jac(opt, *lg0, Vector::Zero(1), std::span<const double>());
  CHECK(j.rows() == 1);
  CHECK(j(0, 0) == 0.25);

  LogisticGlmModel lg1(1);
  const std::vector<double> x1 = {1.0};
  for (double eta : {-30.0, 30.0}) {
    Vector theta(2);
    theta << eta, 0.0;
    CHECK(cond_mean_jac(MomentFunction::xy(1), lg1, theta, x1).norm() < 1e-10);
  }
}

TEST_CASE("optimal moment has zero conditional mean at its own pilot") {
  for (const std::string name : {"logistic", "weibull"}) {
    std::shared_ptr<const ConditionalModel> model = make_model(name, 4);
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Vector pilot = testutil::random_theta(*model, 500 + s);
      const auto h = build_optimal_moment(model, pilot);
      CHECK(h.q() == model->dim());
      const auto x = random_x(4, 600 + s);
      CHECK(cond_mean(h, *model, pilot, x).norm() < 1e-12);
      const double y = testutil::random_response(*model, pilot, x, s);
      CHECK((h.eval_h(Observation{x, y}) - model->score(pilot, Observation{x, y})).norm() == 0.0);
    }
  }
  std::shared_ptr<const ConditionalModel> lg = make_model("logistic", 9);
  CHECK(build_optimal_moment(lg, Vector::Zero(10)).q() == 10);
}

TEST_CASE("Weibull optimal moment matches quadrature") {
  auto model = std::make_shared<WeibullAftModel>(3);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Vector theta = testutil::random_theta(*model, 700 + s);
    const Vector pilot = testutil::random_theta(*model, 800 + s);
    const auto x = random_x(3, 900 + s);
    const auto h = build_optimal_moment(model, pilot);
    const Vector closed = cond_mean(h, *model, theta, x);
    const Vector quad = oracles::weibull_score_mean_by_quadrature(*model, theta, pilot, x);
    worst = std::max(worst, (closed - quad).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("XY conditional means match quadrature and Monte Carlo") {
  WeibullAftModel wb(2);
  const Vector theta = testutil::random_theta(wb, 17);
  const auto x = random_x(2, 18);
  const double eta = model_linear_predictor(wb, theta, x);
  auto f = [&](double t, Vector& out) {
    out[0] = std::pow(t * std::exp(-eta), 1.0 / theta[0]) * std::exp(-t);
  };
  QuadratureOptions o;
  o.abs_tol = 1e-12;
  const double ey = integrate(f, 1, 0.0, 1.0, o).value[0] + integrate(f, 1, 1.0, 200.0, o).value[0];
  const Vector m = cond_mean(MomentFunction::xy(2), wb, theta, x);
  CHECK(std::abs(m[0] - ey * x[0]) < 1e-9);
  CHECK(std::abs(m[1] - ey * x[1]) < 1e-9);
}

TEST_CASE("cond_mean_jac matches finite differences") {
  for (const std::string name : {"logistic", "weibull"}) {
    std::shared_ptr<const ConditionalModel> model = make_model(name, 3);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Vector theta = testutil::random_theta(*model, 1000 + s);
      const Vector pilot = testutil::random_theta(*model, 1100 + s);
      const auto x = random_x(3, 1200 + s);
      for (const auto& h : {MomentFunction::xy(3), build_optimal_moment(model, pilot)}) {
        auto f = [&](const Vector& t) -> Vector { return cond_mean(h, *model, t, x); };
        worst = std::max(worst, max_rel(cond_mean_jac(h, *model, theta, x), finite_diff_jacobian(f, theta)));
      }
    }
    CAPTURE(name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("transformed moment recombines h, m and its Jacobian") {
  std::shared_ptr<const ConditionalModel> model = make_model("weibull", 2);
  const Vector pilot = testutil::random_theta(*model, 3);
  const Vector theta = testutil::random_theta(*model, 4);
  const auto h = build_optimal_moment(model, pilot);
  Matrix a = Matrix::Identity(4, 4);
  a(0, 1) = 0.5;
  a(3, 2) = -2.0;
  const auto ah = h.transformed(a);
  const auto x = random_x(2, 5);
  const Observation o{x, 1.3};
  CHECK((ah.eval_h(o) - a * h.eval_h(o)).norm() < 1e-13);
  CHECK((cond_mean(ah, *model, theta, x) - a * cond_mean(h, *model, theta, x)).norm() < 1e-12);
  CHECK((cond_mean_jac(ah, *model, theta, x) - a * cond_mean_jac(h, *model, theta, x)).norm() < 1e-12);
  CHECK_THROWS_AS(h.transformed(Matrix::Identity(3, 3)), InputError);
}

TEST_CASE("a(x) = m(x) - mu0 has mean zero under the model") {
  for (const std::string name : {"logistic", "weibull"}) {
    std::shared_ptr<const ConditionalModel> model = make_model(name, 3);
    const Vector theta0 = testutil::random_theta(*model, 55);
    const Vector pilot = testutil::random_theta(*model, 56);
    for (const auto& h : {MomentFunction::xy(3), build_optimal_moment(model, pilot)}) {
      const std::size_t m = 100000;
      const auto q = static_cast<Eigen::Index>(h.q());
      Vector sum = Vector::Zero(q), sq = Vector::Zero(q);
      std::vector<double> x(3);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < 3; ++j) x[j] = testutil::uniform(60, i * 3 + j, -1, 1);
        const double y = model->sample_response(theta0, x, unit_open(mix64(61, i)));
        // m(X) - h(X, Y) averages to E[m(X)] - mu0
        const Vector d = cond_mean(h, *model, theta0, x) - h.eval_h(Observation{x, y});
        sum += d;
        sq += d.cwiseAbs2();
      }
      const Vector mean = sum / double(m);
      const Vector sd = (sq / double(m) - mean.cwiseAbs2()).cwiseSqrt();
      for (Eigen::Index k = 0; k < q; ++k) {
        CAPTURE(name);
        CHECK(std::abs(mean[k]) < 5.0 * sd[k] / std::sqrt(double(m)));
      }
    }
  }
}

TEST_CASE("whole_data_moment examples") {
  const auto xy = MomentFunction::xy(1);
  const Dataset two(1, {1.0, 3.0}, {2.0, 4.0});
  const WholeDataMoment w = whole_data_moment(xy, two);
  CHECK(w.count == 2);
  CHECK(w.mu_hat[0] == 7.0);

  const Dataset one(2, {0.3, -0.2}, {1.0});
  std::shared_ptr<const ConditionalModel> model = make_model("logistic", 2);
  const auto opt = build_optimal_moment(model, Vector::Constant(3, 0.1));
  const std::vector<double> x = {0.3, -0.2};
  CHECK((whole_data_moment(opt, one).mu_hat - opt.eval_h(Observation{x, 1.0})).norm() == 0.0);

  CHECK_THROWS_AS(whole_data_moment(xy, Dataset(1, {}, {})), InputError);
}

TEST_CASE("whole_data_moment: sequential oracle, thread, kernel and permutation invariance") {
  for (const std::string name : {"logistic", "weibull"}) {
    std::shared_ptr<const ConditionalModel> model = make_model(name, 5);
    const Vector theta = testutil::random_theta(*model, 7);
    const Dataset data = testutil::make_data(*model, theta, 100000, 8);
    const Vector pilot = testutil::random_theta(*model, 9);
    for (const auto& h : {MomentFunction::xy(5), build_optimal_moment(model, pilot)}) {
      Vector naive = Vector::Zero(static_cast<Eigen::Index>(h.q()));
      for (std::size_t i = 0; i < data.size(); ++i) naive += h.eval_h(data.row(i));
      naive /= static_cast<double>(data.size());

      const Vector one = whole_data_moment(h, data, 1, true).mu_hat;
      const Vector four = whole_data_moment(h, data, 4, true).mu_hat;
      const Vector plain = whole_data_moment(h, data, 3, false).mu_hat;
      CAPTURE(name);
      CHECK((one - four).norm() == 0.0);
      CHECK((one - naive).norm() <= 1e-12 * naive.norm());
      CHECK((one - plain).norm() <= 1e-12 * naive.norm());

      // reversed row order
      std::vector<double> x(data.x().size()), y(data.size());
      const std::size_t p = 5;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t r = data.size() - 1 - i;
        std::copy_n(data.x().begin() + static_cast<std::ptrdiff_t>(r * p), p, x.begin() + static_cast<std::ptrdiff_t>(i * p));
        y[i] = data.y()[r];
      }
      const Dataset rev(p, std::move(x), std::move(y));
      CHECK((whole_data_moment(h, rev, 2).mu_hat - one).norm() <= 1e-12 * naive.norm());
    }
  }
}
