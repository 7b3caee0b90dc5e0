#include "doctest.h"

#include "massub/estimator.hpp"
#include "massub/numerics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

using namespace massub;
using testutil::max_rel;
using namespace oracles;

namespace {

using Index = Eigen::Index;

// Logistic data plus a score-norm plan over it.
struct Fixture {
  std::shared_ptr<const ConditionalModel> model;
  Dataset data;
  SubsamplingPlan plan;
};

Fixture logistic_fixture(std::size_t p, std::size_t rows, double n, std::uint64_t seed) {
  Fixture f;
  f.model = make_model("logistic", p);
  const Parameter theta = testutil::random_theta(*f.model, seed);
  f.data = testutil::make_data(*f.model, theta, rows, seed + 1);
  f.plan = make_plan(Design::ScoreNorm, f.data, n, f.model, Parameter(0.5 * theta));
  return f;
}

// Weighted IRLS for the logistic score equations sum w_i (y_i - sigma) z_i = 0.
Vector irls(const Subsample& s, const std::vector<double>& w) {
  const Index d = static_cast<Index>(s.p) + 1;
  Vector beta = Vector::Zero(d);
  for (int it = 0; it < 200; ++it) {
    Matrix xtwx = Matrix::Zero(d, d);
    Vector xtwz = Vector::Zero(d);
    for (std::size_t i = 0; i < s.size(); ++i) {
      Vector z(d);
      z[0] = 1.0;
      for (std::size_t j = 0; j < s.p; ++j) z[static_cast<Index>(j) + 1] = s.x[i * s.p + j];
      const double eta = z.dot(beta);
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      const double v = mu * (1.0 - mu);
      const double work = eta + (s.y[i] - mu) / v;
      xtwx += w[i] * v * z * z.transpose();
      xtwz += w[i] * v * work * z;
    }
    const Vector next = xtwx.ldlt().solve(xtwz);
    if ((next - beta).norm() < 1e-14 * (1.0 + beta.norm())) return next;
    beta = next;
  }
  return beta;
}

}  // namespace

TEST_CASE("eval_u: uniform plan identities") {
  const Fixture f = logistic_fixture(3, 500, 50, 1);
  const SubsamplingPlan uni = make_plan(Design::Uniform, f.data, 50);
  const Parameter theta = testutil::random_theta(*f.model, 2);
  for (std::size_t i = 0; i < 50; ++i) {
    const Observation o = f.data.row(i);
    const Vector psi = f.model->score(theta, o);
    CHECK((eval_u(EstimatorKind::Ipw, *f.model, uni, theta, o) - psi).norm() == 0.0);
    CHECK((eval_u(EstimatorKind::Mscl, *f.model, uni, theta, o) - psi).norm() == 0.0);
    CHECK((eval_u(EstimatorKind::UniformMle, *f.model, uni, theta, o) - psi).norm() == 0.0);
    CHECK((eval_u_jac(EstimatorKind::Mscl, *f.model, uni, theta, o) - f.model->score_jacobian(theta, o)).norm() == 0.0);
  }
}

TEST_CASE("eval_u_jac matches finite differences under a score-norm plan") {
  const Fixture f = logistic_fixture(3, 2000, 100, 3);
  for (EstimatorKind kind : {EstimatorKind::UniformMle, EstimatorKind::Ipw, EstimatorKind::Mscl}) {
    double worst = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      const Observation o = f.data.row(i);
      const Parameter theta = testutil::random_theta(*f.model, 10 + i);
      auto u = [&](const Vector& t) -> Vector { return eval_u(kind, *f.model, f.plan, t, o); };
      worst = std::max(worst, max_rel(eval_u_jac(kind, *f.model, f.plan, theta, o), finite_diff_jacobian(u, theta)));
    }
    CAPTURE(std::string(to_string(kind)));
    CHECK(worst < 1e-5);
  }
  auto wb = make_model("weibull", 2);
  const Parameter theta = testutil::random_theta(*wb, 4);
  const Dataset wd = testutil::make_data(*wb, theta, 100, 5);
  const SubsamplingPlan wp = make_plan(Design::ScoreNorm, wd, 20, std::shared_ptr<const ConditionalModel>(make_model("weibull", 2)), theta);
  for (std::size_t i = 0; i < 20; ++i) {
    const Observation o = wd.row(i);
    auto u = [&](const Vector& t) -> Vector { return eval_u(EstimatorKind::Ipw, *wb, wp, t, o); };
    CHECK(max_rel(eval_u_jac(EstimatorKind::Ipw, *wb, wp, theta, o), finite_diff_jacobian(u, theta)) < 1e-5);
  }
}

TEST_CASE("mscl_pi_bar: examples and derivatives") {
  // intercept-only pilot with sigma = 1/3: norms 2/3 at y = 1 and 1/3 at y = 0
  auto model = std::make_shared<LogisticGlmModel>(0);
  SubsamplingPlan plan;
  plan.design = Design::ScoreNorm;
  plan.model = model;
  plan.pilot = Parameter::Constant(1, std::log(0.5));
  plan.scale = 0.003;
  plan.n = 1.0;
  plan.population = 1000;
  plan.rho = 0.001;
  plan.clamp_lo = 0.0;
  plan.clamp_hi = 1.0;
  const std::span<const double> none;
  const PiBar pb = mscl_pi_bar(*model, plan, Parameter::Zero(1), none);
  CHECK(std::abs(pb.value - 0.0015) < 1e-17);
  CHECK(std::abs(pb.gradient[0] - 0.001 * 0.25) < 1e-17);

  const Fixture f = logistic_fixture(2, 100, 10, 6);
  const SubsamplingPlan uni = make_plan(Design::Uniform, f.data, 10);
  const std::vector<double> x = {0.4, -0.9};
  const PiBar u = mscl_pi_bar(*f.model, uni, Parameter::Constant(3, 0.2), x);
  CHECK(u.value == uni.rho);
  CHECK(u.gradient.norm() == 0.0);

  double worst_g = 0.0, worst_h = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Parameter theta = testutil::random_theta(*f.model, 20 + s);
    const auto xs = f.data.row(s).x;
    auto val = [&](const Vector& t) -> Vector { return Vector::Constant(1, mscl_pi_bar(*f.model, f.plan, t, xs).value); };
    auto grad = [&](const Vector& t) -> Vector { return mscl_pi_bar(*f.model, f.plan, t, xs).gradient; };
    const PiBar at = mscl_pi_bar(*f.model, f.plan, theta, xs);
    worst_g = std::max(worst_g, (at.gradient.transpose() - finite_diff_jacobian(val, theta)).cwiseAbs().maxCoeff());
    worst_h = std::max(worst_h, (at.hessian - finite_diff_jacobian(grad, theta)).cwiseAbs().maxCoeff());
  }
  CHECK(worst_g < 1e-7);
  CHECK(worst_h < 1e-7);
}

TEST_CASE("solve_plain agrees with weighted IRLS") {
  const Fixture f = logistic_fixture(3, 50, 20, 7);
  const Subsample s = take(f.data, f.plan, first_rows(50));
  std::vector<double> ones(50, 1.0), ipw(50);
  for (std::size_t i = 0; i < 50; ++i) ipw[i] = f.plan.ipw_weight(s.prob[i]);

  const NewtonResult uni = solve_plain(EstimatorKind::UniformMle, s, *f.model, f.plan, Parameter::Zero(4));
  CHECK((uni.theta - irls(s, ones)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(uni.residual < kNewtonTolerance);

  const NewtonResult w = solve_plain(EstimatorKind::Ipw, s, *f.model, f.plan, Parameter::Zero(4));
  CHECK((w.theta - irls(s, ipw)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("solve_plain: balanced symmetric design gives zero") {
  std::vector<double> x, y;
  for (double a : {-1.0, 1.0}) {
    for (double b : {-1.0, 1.0}) {
      for (int r = 0; r < 4; ++r) {
        x.push_back(a);
        x.push_back(b);
        y.push_back(r % 2);
      }
    }
  }
  const Dataset data(2, x, y);
  const SubsamplingPlan plan = make_plan(Design::Uniform, data, 16);
  const Subsample s = take(data, plan, first_rows(16));
  auto model = make_model("logistic", 2);
  Parameter start(3);
  start << 0.3, -0.2, 0.1;
  const NewtonResult r = solve_plain(EstimatorKind::UniformMle, s, *model, plan, start);
  CHECK(r.theta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("solve_plain: Weibull stationarity and agreement with the full-data solver") {
  auto model = make_model("weibull", 2);
  Parameter theta0(4);
  theta0 << 0.5, 0.2, -0.4, 0.3;
  const Dataset data = testutil::make_data(*model, theta0, 400, 8);
  const SubsamplingPlan plan = make_plan(Design::Uniform, data, 400);
  const Subsample s = take(data, plan, first_rows(400));
  const NewtonResult r = solve_plain(EstimatorKind::UniformMle, s, *model, plan, model->default_initial());
  Vector grad = Vector::Zero(4);
  for (std::size_t i = 0; i < s.size(); ++i) grad += model->score(r.theta, s.row(i));
  CHECK(grad.norm() / 400.0 < 1e-8);
  CHECK(r.theta[0] > 0.0);

  const NewtonResult full = solve_full_mle(*model, data, model->default_initial(), 2);
  CHECK((full.theta - r.theta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("solve_plain: MSCL and IPW agree under a uniform plan") {
  const Fixture f = logistic_fixture(4, 3000, 300, 9);
  const SubsamplingPlan uni = make_plan(Design::Uniform, f.data, 300);
  const Subsample s = draw_poisson(uni, f.data, 4);
  const NewtonResult a = solve_plain(EstimatorKind::Ipw, s, *f.model, uni, Parameter::Zero(5));
  const NewtonResult b = solve_plain(EstimatorKind::Mscl, s, *f.model, uni, Parameter::Zero(5));
  CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("solve_plain: failures are reported distinctly") {
  auto model = make_model("logistic", 1);
  // separated by the sign of x
  const Dataset sep(1, {-2, -1, -0.5, 0.5, 1, 2}, {0, 0, 0, 1, 1, 1});
  const SubsamplingPlan plan = make_plan(Design::Uniform, sep, 6);
  try {
    solve_plain(EstimatorKind::UniformMle, take(sep, plan, first_rows(6)), *model, plan, Parameter::Zero(2));
    FAIL("separation not detected");
  } catch (const NumericalError& e) {
    CHECK(e.failure() == NumericalFailure::Separation);
  }

  // duplicated covariate column
  auto model2 = make_model("logistic", 2);
  const Dataset dup(2, {1, 1, 2, 2, -1, -1, 0.5, 0.5}, {1, 0, 1, 0});
  const SubsamplingPlan dplan = make_plan(Design::Uniform, dup, 4);
  try {
    solve_plain(EstimatorKind::UniformMle, take(dup, dplan, first_rows(4)), *model2, dplan, Parameter::Zero(3));
    FAIL("singular Jacobian not detected");
  } catch (const NumericalError& e) {
    CHECK(e.failure() == NumericalFailure::SingularJacobian);
  }

  try {
    solve_plain(EstimatorKind::UniformMle, Subsample{}, *model, plan, Parameter::Zero(2));
    FAIL("empty subsample accepted");
  } catch (const NumericalError& e) {
    CHECK(e.failure() == NumericalFailure::EmptySubsample);
  }

  CHECK_THROWS_AS(check_estimator(EstimatorKind::Mscl, WeibullAftModel(2)), InputError);
  Vector out(2);
  CHECK_THROWS_AS(eval_u(EstimatorKind::Ipw, *model, plan, Parameter::Zero(2), sep.row(0), 0.0, out),
                  InputError);
}

TEST_CASE("assemble_gmm equals a naive double loop") {
  const Fixture f = logistic_fixture(3, 4000, 200, 11);
  const Subsample full = draw_poisson(f.plan, f.data, 12);
  for (std::size_t size : {20, 100}) {
    REQUIRE(full.size() >= size);
    Subsample s = full;
    s.index.resize(size);
    s.y.resize(size);
    s.prob.resize(size);
    s.x.resize(size * s.p);
    const Parameter theta = testutil::random_theta(*f.model, 13);
    const Parameter pilot = testutil::random_theta(*f.model, 14);
    for (EstimatorKind kind : {EstimatorKind::UniformMle, EstimatorKind::Ipw, EstimatorKind::Mscl}) {
      for (const auto& h : {MomentFunction::xy(3), build_optimal_moment(f.model, pilot)}) {
        const Vector mu = whole_data_moment(h, f.data).mu_hat;
        const GmmAssembly a = assemble_gmm(kind, s, *f.model, f.plan, &h, &mu, theta);
        const GmmAssembly b = naive_assembly(kind, s, *f.model, f.plan, h, mu, theta);
        CAPTURE(size);
        CHECK(max_rel(a.g, b.g) < 1e-12);
        CHECK(max_rel(a.G, b.G) < 1e-12);
        CHECK(max_rel(a.Omega, b.Omega) < 1e-12);
        CHECK((a.Omega - a.Omega.transpose()).norm() == 0.0);
        CHECK(a.d == 4);
        CHECK(a.q == h.q());
        CHECK(a.rho == f.plan.rho);
        CHECK(a.n_expected == f.plan.n);
      }
    }
  }
}

TEST_CASE("assemble_gmm: score moment at the plain estimate gives v = -mu_hat") {
  const Fixture f = logistic_fixture(3, 3000, 300, 15);
  const SubsamplingPlan uni = make_plan(Design::Uniform, f.data, 300);
  const Subsample s = draw_poisson(uni, f.data, 16);
  const Parameter theta = solve_plain(EstimatorKind::UniformMle, s, *f.model, uni, Parameter::Zero(4)).theta;
  const MomentFunction h = build_optimal_moment(f.model, theta);
  const Vector mu = whole_data_moment(h, f.data).mu_hat;
  const GmmAssembly a = assemble_gmm(EstimatorKind::UniformMle, s, *f.model, uni, &h, &mu, theta);
  const Vector expect = -static_cast<double>(s.size()) / 300.0 * mu;
  CHECK((a.g.tail(4) - expect).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(assemble_gmm(EstimatorKind::UniformMle, s, *f.model, uni, &h, nullptr, theta), InputError);
  const Vector wrong = Vector::Zero(2);
  CHECK_THROWS_AS(assemble_gmm(EstimatorKind::UniformMle, s, *f.model, uni, &h, &wrong, theta), InputError);
}

TEST_CASE("mas_step: linearized objective oracle and degenerate cases") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const GmmAssembly a = random_assembly(5, 7, seed * 10);
    const MasStep m = mas_step(a);
    // minimize |L^-1 (g + G delta)| with Omega = L L^T by orthogonal least squares
    const Eigen::LLT<Matrix> llt(a.Omega);
    const Matrix lg = llt.matrixL().solve(a.G);
    const Vector lr = llt.matrixL().solve(a.g);
    const Vector delta = lg.colPivHouseholderQr().solve(-lr);
    const Vector oracle = a.theta_tilde + delta;
    CHECK((m.theta_mas - oracle).norm() <= 1e-8 * oracle.norm());
    const Matrix r = lg.householderQr().matrixQR().topRows(5).triangularView<Eigen::Upper>();
    const Matrix rinv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(5, 5));
    CHECK(max_rel(m.v_hat, rinv * rinv.transpose()) < 1e-8);
    // first-order condition of the linearized objective
    const Vector grad = a.G.transpose() * a.Omega.ldlt().solve(a.g + a.G * (m.theta_mas - a.theta_tilde));
    CHECK(grad.norm() < 1e-8);
    CHECK((m.std_errors - (m.v_hat.diagonal() / a.n_expected).cwiseSqrt()).norm() == 0.0);
  }

  GmmAssembly zero = random_assembly(4, 3, 99);
  zero.g.setZero();
  CHECK((mas_step(zero).theta_mas - zero.theta_tilde).norm() == 0.0);

  GmmAssembly sq = random_assembly(4, 0, 77);
  const MasStep step = mas_step(sq);
  const Vector newton = sq.theta_tilde - sq.G.lu().solve(sq.g);
  CHECK((step.theta_mas - newton).norm() < 1e-10 * newton.norm());
  // without moments the variance is the sandwich G^-1 Omega G^-T
  const Matrix ginv = sq.G.inverse();
  CHECK(max_rel(step.v_hat, ginv * sq.Omega * ginv.transpose()) < 1e-10);
}

TEST_CASE("mas_step: error kinds") {
  GmmAssembly bad = random_assembly(3, 2, 5);
  bad.Omega.row(4).setZero();
  bad.Omega.col(4).setZero();
  try {
    mas_step(bad);
    FAIL("singular covariance accepted");
  } catch (const NumericalError& e) {
    CHECK(e.failure() == NumericalFailure::SingularCovariance);
    CHECK(std::string(e.what()).find("Omega22") != std::string::npos);
  }
  GmmAssembly flat = random_assembly(3, 2, 6);
  flat.G.col(1).setZero();
  try {
    mas_step(flat);
    FAIL("rank-deficient G accepted");
  } catch (const NumericalError& e) {
    CHECK(e.failure() == NumericalFailure::RankDeficient);
  }
}

TEST_CASE("apply_jitter adds a scaled identity to Omega22") {
  GmmAssembly a = random_assembly(3, 4, 8);
  const Matrix before = a.Omega;
  apply_jitter(a, 1e-3);
  const double expect = 1e-3 * before.bottomRightCorner(4, 4).trace() / 4.0;
  CHECK(a.jitter == doctest::Approx(expect));
  Matrix diff = a.Omega - before;
  CHECK(std::abs(diff(5, 5) - expect) < 1e-15);
  diff.bottomRightCorner(4, 4).diagonal().setZero();
  CHECK(diff.norm() == 0.0);
}

TEST_CASE("plain_variance equals the q = 0 assembly and a naive sandwich") {
  const Fixture f = logistic_fixture(3, 4000, 300, 21);
  const Subsample s = draw_poisson(f.plan, f.data, 22);
  for (EstimatorKind kind : {EstimatorKind::Ipw, EstimatorKind::Mscl}) {
    const Parameter theta = solve_plain(kind, s, *f.model, f.plan, Parameter::Zero(4)).theta;
    const Matrix vs = plain_variance(kind, s, *f.model, f.plan, theta);
    const GmmAssembly a0 = assemble_gmm(kind, s, *f.model, f.plan, nullptr, nullptr, theta);
    CHECK(max_rel(vs, mas_step(a0).v_hat) < 1e-12);
    Matrix g1 = Matrix::Zero(4, 4), o11 = Matrix::Zero(4, 4);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Vector u = eval_u(kind, *f.model, f.plan, theta, s.row(i));
      g1 += eval_u_jac(kind, *f.model, f.plan, theta, s.row(i));
      o11 += u * u.transpose();
    }
    g1 /= f.plan.n;
    o11 /= f.plan.n;
    const Matrix naive = (g1.transpose() * o11.inverse() * g1).inverse();
    CHECK(max_rel(vs, naive) < 1e-10);
  }
}

TEST_CASE("moment transform invariance") {
  const Fixture f = logistic_fixture(3, 20000, 1000, 31);
  const Subsample s = draw_poisson(f.plan, f.data, 32);
  const Parameter pilot = testutil::random_theta(*f.model, 33);
  const MomentFunction h = build_optimal_moment(f.model, pilot);
  Matrix a = testutil::random_vector(16, 34, -1, 1).reshaped(4, 4);
  a += 3.0 * Matrix::Identity(4, 4);
  const MomentFunction ah = h.transformed(a);
  const Vector mu = whole_data_moment(h, f.data).mu_hat;
  const Vector amu = whole_data_moment(ah, f.data).mu_hat;
  CHECK((amu - a * mu).norm() < 1e-12 * amu.norm());
  for (EstimatorKind kind : {EstimatorKind::Ipw, EstimatorKind::Mscl}) {
    const Parameter theta = solve_plain(kind, s, *f.model, f.plan, Parameter::Zero(4)).theta;
    const MasStep m1 = mas_step(assemble_gmm(kind, s, *f.model, f.plan, &h, &mu, theta));
    const MasStep m2 = mas_step(assemble_gmm(kind, s, *f.model, f.plan, &ah, &amu, theta));
    CHECK((m1.theta_mas - m2.theta_mas).norm() <= 1e-8 * m1.theta_mas.norm());
    CHECK(max_rel(m1.v_hat, m2.v_hat) < 1e-8);
  }
}
