#include "doctest.h"

#include "massub/moments.hpp"
#include "massub/sampling.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <mutex>
#include <memory>
#include <vector>

using namespace massub;

namespace {

// Root of sum_i clamp(c a_i, lo, hi) = n by bisection; the sum is monotone in c.
std::vector<double> bisection_probabilities(const std::vector<double>& a, double n, double lo, double hi) {
  auto total = [&](double c) {
    double s = 0.0;
    for (double v : a) s += std::clamp(c * v, lo, hi);
    return s;
  };
  double left = 0.0, right = 1.0;
  while (total(right) < n) right *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (left + right);
    (total(mid) < n ? left : right) = mid;
  }
  std::vector<double> p;
  for (double v : a) p.push_back(std::clamp(right * v, lo, hi));
  return p;
}

std::vector<double> norms(const ConditionalModel& model, const Parameter& pilot, const Dataset& data) {
  std::vector<double> a;
  for (std::size_t i = 0; i < data.size(); ++i) a.push_back(score_norm(model, pilot, data.row(i)));
  return a;
}

void check_plan_against_oracle(const SubsamplingPlan& plan, const ConditionalModel& model,
                               const Parameter& pilot, const Dataset& data, double n) {
  const auto a = norms(model, pilot, data);
  const auto oracle = bisection_probabilities(a, n, plan.clamp_lo, plan.clamp_hi);
  double sum = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = plan.probability(data.row(i));
    CHECK(p >= plan.clamp_lo);
    CHECK(p <= plan.clamp_hi);
    sum += p;
    worst = std::max(worst, std::abs(p - oracle[i]) / oracle[i]);
  }
  CHECK(std::abs(sum - n) <= 1e-9 * n);
  CHECK(worst < 1e-9);
}

std::vector<std::size_t> scan_indices(const RecordSource& source, unsigned threads) {
  std::map<std::size_t, std::vector<std::size_t>> by_block;
  std::mutex mu;
  source.scan(
      [&](const RowBlock& b) {
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < b.count; ++k) idx.push_back(b.index(k));
        std::lock_guard<std::mutex> lock(mu);
        by_block[b.block_id] = std::move(idx);
      },
      threads);
  std::vector<std::size_t> out;
  std::size_t expect_id = 0;
  for (auto& [id, idx] : by_block) {
    CHECK(id == expect_id++);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  CHECK(by_block.size() == source.block_count());
  return out;
}

}  // namespace

TEST_CASE("uniform plan") {
  const Dataset data(1, std::vector<double>(1000000, 0.5), std::vector<double>(1000000, 1.0));
  const SubsamplingPlan plan = make_plan(Design::Uniform, data, 1000);
  CHECK(plan.rho == 0.001);
  CHECK(plan.probability(data.row(17)) == 0.001);
  CHECK(plan.ipw_weight(plan.probability(data.row(3))) == 1.0);
  CHECK_THROWS_AS(make_plan(Design::Uniform, data, 0), InputError);
  CHECK_THROWS_AS(make_plan(Design::Uniform, data, 2e6), InputError);
  CHECK_THROWS_AS(make_plan(Design::ScoreNorm, data, 100), InputError);
}

TEST_CASE("score-norm plan with equal norms is uniform") {
  // |y - 0.5| * sqrt(1 + x^2) is the same for every record at pilot 0
  std::vector<double> x(500), y(500);
  for (std::size_t i = 0; i < 500; ++i) {
    x[i] = (i % 2) ? 0.7 : -0.7;
    y[i] = static_cast<double>(i % 3 == 0);
  }
  const Dataset data(1, x, y);
  auto model = std::make_shared<LogisticGlmModel>(1);
  const SubsamplingPlan plan = make_plan(Design::ScoreNorm, data, 50, model, Parameter::Zero(2));
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(std::abs(plan.probability(data.row(i)) - 0.1) < 1e-15);
}

TEST_CASE("score-norm plan on ten records matches a brute-force loop") {
  const std::vector<double> x = {0.01, 0.02, 0.5, -0.3, 2.0, 8.0, 40.0, -0.05, 1.0, 0.0};
  const std::vector<double> y = {1, 0, 1, 1, 0, 1, 0, 1, 1, 0};
  const Dataset data(1, x, y);
  auto model = std::make_shared<LogisticGlmModel>(1);
  Parameter pilot(2);
  pilot << 0.2, 1.5;

  // normalize, clamp, rescale the free records until nothing moves
  std::vector<double> a = norms(*model, pilot, data);
  const double n = 3.0, rho = 0.3, lo = 0.03, hi = 1.0;
  double total = 0.0;
  for (double v : a) total += v;
  double c = n / total;
  for (int round = 0; round < 100; ++round) {
    double free_sum = 0.0, fixed = 0.0;
    for (double v : a) {
      if (c * v < lo) fixed += lo;
      else if (c * v > hi) fixed += hi;
      else free_sum += v;
    }
    c = (n - fixed) / free_sum;
  }

  const SubsamplingPlan plan = make_plan(Design::ScoreNorm, data, n, model, pilot);
  CHECK(plan.rho == doctest::Approx(rho));
  CHECK(plan.clamp_lo == doctest::Approx(lo));
  CHECK(plan.clamp_hi == hi);
  CHECK(plan.clamped_records >= 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double p = plan.probability(data.row(i));
    CHECK(std::abs(p - std::clamp(c * a[i], lo, hi)) < 1e-12);
    sum += p;
  }
  CHECK(std::abs(sum - n) < 1e-12);
  check_plan_against_oracle(plan, *model, pilot, data, n);
}

TEST_CASE("score-norm plan: sum and bounds on larger data, both normalizer paths") {
  for (const std::string name : {"logistic", "weibull"}) {
    std::shared_ptr<const ConditionalModel> model = make_model(name, 3);
    const Parameter theta = testutil::random_theta(*model, 21);
    const Parameter mild = testutil::random_theta(*model, 22);
    // a sharp pilot spreads the norms over several decades
    Parameter sharp = 6.0 * mild;
    if (model->family() == ModelFamily::Weibull) sharp[0] = 1.5;
    const Dataset data = testutil::make_data(*model, theta, 60000, 23);
    CAPTURE(name);

    // few records clamped: the kept tails settle every round
    const SubsamplingPlan light = make_plan(Design::ScoreNorm, data, 600, model, mild, 3);
    CHECK(light.extra_passes == 0);
    check_plan_against_oracle(light, *model, mild, data, 600);

    // more clamped records than the kept tails hold: streaming rounds
    const SubsamplingPlan heavy = make_plan(Design::ScoreNorm, data, 24000, model, sharp, 3);
    CHECK(heavy.clamped_records > kTailKeep);
    CHECK(heavy.extra_passes > 0);
    check_plan_against_oracle(heavy, *model, sharp, data, 24000);

    // thread count does not change the plan
    const SubsamplingPlan serial = make_plan(Design::ScoreNorm, data, 24000, model, sharp, 1);
    CHECK(serial.scale == heavy.scale);
    CHECK(serial.extra_passes == heavy.extra_passes);
  }
}

TEST_CASE("score-norm plan falls back to uniform on zero norms") {
  // a logistic pilot with huge intercept makes every residual exactly zero
  const Dataset data(1, {0.1, 0.2, 0.3, 0.4}, {1, 1, 1, 1});
  auto model = std::make_shared<LogisticGlmModel>(1);
  Parameter pilot(2);
  pilot << 800.0, 0.0;
  const SubsamplingPlan plan = make_plan(Design::ScoreNorm, data, 2, model, pilot);
  CHECK(plan.fell_back_to_uniform);
  CHECK(plan.design == Design::Uniform);
  CHECK(plan.probability(data.row(0)) == 0.5);
}

TEST_CASE("draw_poisson: all records at p = 1, determinism, threads") {
  auto model = std::make_shared<LogisticGlmModel>(2);
  const Parameter theta = Parameter::Constant(3, 0.3);
  const Dataset data = testutil::make_data(*model, theta, 20000, 5);

  const SubsamplingPlan all = make_plan(Design::Uniform, data, 20000);
  const Subsample everything = draw_poisson(all, data, 1);
  REQUIRE(everything.size() == 20000);
  for (std::size_t k = 0; k < 20000; ++k) CHECK(everything.index[k] == k);

  for (const auto& plan : {make_plan(Design::Uniform, data, 700),
                           make_plan(Design::ScoreNorm, data, 700, model, Parameter(Parameter::Zero(3)))}) {
    const Subsample a = draw_poisson(plan, data, 99, 1);
    const Subsample b = draw_poisson(plan, data, 99, 4);
    const Subsample c = draw_poisson(plan, data, 99, 2);
    CHECK(a.index == b.index);
    CHECK(a.index == c.index);
    CHECK(a.prob == b.prob);
    CHECK(a.x == b.x);
    CHECK(a.expected_n == doctest::Approx(700.0));
    CHECK(std::is_sorted(a.index.begin(), a.index.end()));
    CHECK(std::adjacent_find(a.index.begin(), a.index.end()) == a.index.end());
    for (std::size_t k = 0; k < a.size(); ++k) {
      const Observation o = data.row(a.index[k]);
      CHECK(a.row(k).y == o.y);
      CHECK(a.row(k).x[1] == o.x[1]);
      CHECK(a.prob[k] == plan.probability(o));
      // the per-record rule
      CHECK(unit_open(mix64(99, a.index[k])) < a.prob[k]);
    }
    // records left out fail the same rule
    std::size_t kept = 0;
    for (std::size_t i = 0; i < data.size(); ++i) kept += unit_open(mix64(99, i)) < plan.probability(data.row(i));
    CHECK(kept == a.size());
    if (plan.design == Design::Uniform) {
      for (double p : a.prob) CHECK(plan.ipw_weight(p) == 1.0);
    }
  }
}

TEST_CASE("draw_poisson: binomial size bounds and mean size") {
  const std::size_t big = 1000000;
  const Dataset data(1, std::vector<double>(big, 0.5), std::vector<double>(big, 1.0));
  const SubsamplingPlan plan = make_plan(Design::Uniform, data, 1000);
  const double bound = 3.0 * std::sqrt(1e6 * 0.001 * 0.999);
  int inside = 0;
  for (std::uint64_t s = 1; s <= 50; ++s) {
    inside += std::abs(static_cast<double>(draw_poisson(plan, data, s).size()) - 1000.0) <= bound;
  }
  // 3-sigma coverage is 99.7% per seed
  CHECK(inside >= 49);

  auto model = std::make_shared<LogisticGlmModel>(2);
  const Dataset small = testutil::make_data(*model, Parameter::Constant(3, 0.5), 100000, 6);
  const SubsamplingPlan nonuniform = make_plan(Design::ScoreNorm, small, 1000, model, Parameter(Parameter::Zero(3)));
  for (const auto* pl : {&plan, &nonuniform}) {
    const RecordSource& src = pl == &plan ? static_cast<const RecordSource&>(data) : small;
    double total = 0.0;
    for (std::uint64_t s = 1; s <= 200; ++s) total += static_cast<double>(draw_poisson(*pl, src, 1000 + s).size());
    CHECK(std::abs(total / 200.0 - 1000.0) < 10.0);
  }
}

TEST_CASE("draw_pilot: partition, coverage and boundary") {
  const std::size_t n = 100000;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i);
  const Dataset data(1, x, std::vector<double>(n, 1.0));

  int covered = 0;
  const double bound = 3.0 * std::sqrt(200.0);
  for (std::uint64_t s = 1; s <= 50; ++s) {
    const PilotSplit split = draw_pilot(data, 200, s);
    covered += std::abs(static_cast<double>(split.pilot.size()) - 200.0) <= bound;
  }
  CHECK(covered >= 45);

  const PilotSplit split = draw_pilot(data, 200, 7, 2);
  const auto rest = scan_indices(split.remainder, 3);
  CHECK(rest.size() + split.pilot.size() == n);
  CHECK(split.remainder.size() == rest.size());
  std::vector<std::size_t> merged;
  std::merge(rest.begin(), rest.end(), split.pilot.index.begin(), split.pilot.index.end(), std::back_inserter(merged));
  for (std::size_t i = 0; i < n; ++i) CHECK(merged[i] == i);

  const PilotSplit whole = draw_pilot(data, n, 3);
  CHECK(whole.pilot.size() == n);
  CHECK(whole.remainder.size() == 0);
  CHECK_THROWS_AS(whole_data_moment(MomentFunction::xy(1), whole.remainder), InputError);
}

TEST_CASE("draw_pilot: size limits") {
  const Dataset one(1, {0.0}, {1.0});
  // rate 1 never comes back empty
  CHECK(draw_pilot(one, 1, 5).pilot.size() == 1);
  const Dataset many(1, std::vector<double>(1000000, 0.0), std::vector<double>(1000000, 1.0));
  CHECK_THROWS_AS(draw_pilot(many, 0, 5), InputError);
}

TEST_CASE("ExcludingSource agrees with a naive filter") {
  const std::size_t n = 3 * kBlockRows + 100;
  std::vector<double> x(2 * n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[2 * i] = static_cast<double>(i);
    x[2 * i + 1] = -static_cast<double>(i);
    y[i] = static_cast<double>(i % 7);
  }
  const Dataset data(2, x, y);
  std::vector<std::size_t> excluded = {0, 1, 5, kBlockRows - 1, kBlockRows, kBlockRows + 1,
                                       2 * kBlockRows + 17, n - 1};
  for (std::size_t i = 100; i < 200; i += 3) excluded.push_back(i);
  std::sort(excluded.begin(), excluded.end());
  const ExcludingSource view(data, excluded);

  for (unsigned threads : {1u, 4u}) {
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::binary_search(excluded.begin(), excluded.end(), i)) expect.push_back(i);
    }
    CHECK(scan_indices(view, threads) == expect);
  }
  // rows point at the right records
  view.scan(
      [&](const RowBlock& b) {
        for (std::size_t k = 0; k < b.count; ++k) {
          const std::size_t i = b.index(k);
          CHECK(b.row(k).x[0] == static_cast<double>(i));
          CHECK(b.row(k).y == static_cast<double>(i % 7));
        }
      },
      1);
  CHECK(view.size() == n - excluded.size());

  // draws on the view are the base draw minus the excluded records
  const SubsamplingPlan plan = make_plan(Design::Uniform, data, 2000);
  const Subsample base = draw_poisson(plan, data, 11);
  const Subsample sub = draw_poisson(plan, view, 11);
  std::vector<std::size_t> filtered;
  for (std::size_t i : base.index) {
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) filtered.push_back(i);
  }
  CHECK(sub.index == filtered);

  CHECK_THROWS_AS(ExcludingSource(data, {5, 3}), InputError);
  CHECK_THROWS_AS(ExcludingSource(data, {3, 3}), InputError);
  CHECK_THROWS_AS(ExcludingSource(data, {n}), InputError);
}
