#include "massub/sampling.hpp"

#include "massub/kernels.hpp"
#include "massub/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>

namespace massub {
namespace {

// |y - sigmoid(eta)| * ||(1, x)||, summed in increasing j like everything else.
double logistic_norm(double eta, const Observation& obs) noexcept {
  double zz = 1.0;
  for (double v : obs.x) zz = zz + v * v;
  return std::abs(obs.y - sigmoid(eta)) * std::sqrt(zz);
}

// Score norms for a whole block. Same bits as score_norm() row by row.
void block_norms(const ConditionalModel& model, const Parameter& pilot, const RowBlock& block,
                 std::vector<double>& out) {
  out.resize(block.count);
  if (model.family() == ModelFamily::Logistic) {
    kernels::active().logistic_score_norm(block.x, block.count, block.p, pilot.data() + 1,
                                          pilot[0], block.y, out.data());
    return;
  }
  for (std::size_t k = 0; k < block.count; ++k) out[k] = score_norm(model, pilot, block.row(k));
}

struct ClampStats {
  double free_sum = 0.0;
  std::size_t n_lo = 0;
  std::size_t n_hi = 0;
};

// One streaming pass: classifies c*a against the clamp bounds.
ClampStats clamp_stats(const RecordSource& source, const ConditionalModel& model,
                       const Parameter& pilot, double c, double lo, double hi, unsigned threads) {
  std::vector<ClampStats> per_block(source.block_count());
  source.scan(
      [&](const RowBlock& block) {
        std::vector<double> a;
        block_norms(model, pilot, block, a);
        ClampStats s;
        for (double v : a) {
          const double p = c * v;
          if (p < lo) {
            ++s.n_lo;
          } else if (p > hi) {
            ++s.n_hi;
          } else {
            s.free_sum += v;
          }
        }
        per_block[block.block_id] = s;
      },
      threads);
  ClampStats total;
  for (const auto& s : per_block) {
    total.free_sum += s.free_sum;
    total.n_lo += s.n_lo;
    total.n_hi += s.n_hi;
  }
  return total;
}

// The kTailKeep smallest and largest norms seen in a pass. The kept multisets do
// not depend on block order, so the result is thread-count invariant.
struct Tails {
  std::vector<double> low;   // sorted ascending after finish()
  std::vector<double> high;  // sorted ascending after finish()
  bool low_full = false;
  bool high_full = false;

  void add(const std::vector<double>& a) {
    for (double v : a) {
      if (!low_full || v < low_bound_) {
        low.push_back(v);
        if (low.size() == 2 * kTailKeep) compact_low();
      }
      if (!high_full || v > high_bound_) {
        high.push_back(v);
        if (high.size() == 2 * kTailKeep) compact_high();
      }
    }
  }

  void finish() {
    if (low.size() > kTailKeep) compact_low();
    if (high.size() > kTailKeep) compact_high();
    std::sort(low.begin(), low.end());
    std::sort(high.begin(), high.end());
  }

  // Every norm not kept in `low` is >= low.back(), and likewise for `high`.
  // Stats at c come from the tails alone when those bounds put the unkept
  // records strictly inside the clamp range.
  std::optional<ClampStats> stats(double total, double c, double lo, double hi) const {
    if (low_full && !(c * low.back() >= lo)) return std::nullopt;
    if (high_full && !(c * high.front() <= hi)) return std::nullopt;
    ClampStats s;
    double clamped_sum = 0.0;
    for (double v : low) {
      if (!(c * v < lo)) break;
      ++s.n_lo;
      clamped_sum += v;
    }
    for (auto it = high.rbegin(); it != high.rend(); ++it) {
      if (!(c * *it > hi)) break;
      ++s.n_hi;
      clamped_sum += *it;
    }
    s.free_sum = total - clamped_sum;
    return s;
  }

 private:
  // Keep the kTailKeep smallest (largest); later values must beat the bound.
  void compact_low() {
    std::nth_element(low.begin(), low.begin() + (kTailKeep - 1), low.end());
    low.resize(kTailKeep);
    low_bound_ = *std::max_element(low.begin(), low.end());
    low_full = true;
  }
  void compact_high() {
    std::nth_element(high.begin(), high.begin() + (kTailKeep - 1), high.end(), std::greater<>());
    high.resize(kTailKeep);
    high_bound_ = *std::min_element(high.begin(), high.end());
    high_full = true;
  }

  double low_bound_ = 0.0;
  double high_bound_ = 0.0;
};

struct NormPass {
  double total = 0.0;
  Tails tails;
};

NormPass norm_pass(const RecordSource& source, const ConditionalModel& model, const Parameter& pilot,
                   unsigned threads) {
  std::vector<double> per_block(source.block_count(), 0.0);
  NormPass out;
  std::mutex tails_mutex;
  source.scan(
      [&](const RowBlock& block) {
        std::vector<double> a;
        block_norms(model, pilot, block, a);
        double s = 0.0;
        for (double v : a) s += v;
        per_block[block.block_id] = s;
        std::lock_guard lock(tails_mutex);
        out.tails.add(a);
      },
      threads);
  for (double s : per_block) out.total += s;
  out.tails.finish();
  return out;
}

SubsamplingPlan uniform_plan(double n, std::size_t population) {
  SubsamplingPlan plan;
  plan.design = Design::Uniform;
  plan.n = n;
  plan.population = population;
  plan.rho = n / static_cast<double>(population);
  plan.clamp_lo = plan.rho;
  plan.clamp_hi = plan.rho;
  return plan;
}

}  // namespace

double score_norm(const ConditionalModel& model, const Parameter& pilot, const Observation& obs) {
  if (model.family() == ModelFamily::Logistic) {
    return logistic_norm(linear_predictor(pilot[0], pilot.data() + 1, obs.x), obs);
  }
  Vector s(static_cast<Eigen::Index>(model.dim()));
  model.score(pilot, obs, s);
  double ss = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) ss = ss + s[j] * s[j];
  return std::sqrt(ss);
}

double SubsamplingPlan::probability(const Observation& obs) const {
  if (design == Design::Uniform) return rho;
  return std::clamp(scale * score_norm(*model, pilot, obs), clamp_lo, clamp_hi);
}

SubsamplingPlan make_plan(Design design, const RecordSource& source, double n,
                          std::shared_ptr<const ConditionalModel> model,
                          const std::optional<Parameter>& pilot, unsigned threads) {
  const std::size_t population = source.size();
  if (population == 0) throw InputError("cannot build a subsampling plan on an empty dataset");
  if (!(n > 0.0) || n > static_cast<double>(population)) {
    throw InputError("expected subsample size must lie in (0, N], got " + std::to_string(n) +
                     " with N = " + std::to_string(population));
  }
  if (design == Design::Uniform) return uniform_plan(n, population);

  if (!model || !pilot) throw InputError("score-norm plan needs a model and a pilot estimate");
  model->check_parameter(*pilot);

  const NormPass pass = norm_pass(source, *model, *pilot, threads);
  const double total = pass.total;
  if (!std::isfinite(total)) {
    throw NumericalError(NumericalFailure::RangeError, "score norms overflow at the pilot estimate");
  }
  if (total == 0.0) {
    SubsamplingPlan plan = uniform_plan(n, population);
    plan.fell_back_to_uniform = true;
    return plan;
  }

  SubsamplingPlan plan;
  plan.design = Design::ScoreNorm;
  plan.n = n;
  plan.population = population;
  plan.rho = n / static_cast<double>(population);
  plan.clamp_lo = kClampLowFactor * plan.rho;
  plan.clamp_hi = std::min(1.0, kClampHighFactor * plan.rho);
  plan.model = std::move(model);
  plan.pilot = *pilot;

  // Solve sum_i clamp(c a_i) = n. Each round fixes the clamped sets at the
  // current c and re-solves for c on the free records.
  double c = n / total;
  ClampStats stats;
  int rounds = 0;
  for (; rounds < kMaxRescaleRounds; ++rounds) {
    if (auto from_tails = pass.tails.stats(total, c, plan.clamp_lo, plan.clamp_hi)) {
      stats = *from_tails;
    } else {
      stats = clamp_stats(source, *plan.model, plan.pilot, c, plan.clamp_lo, plan.clamp_hi, threads);
      ++plan.extra_passes;
    }
    if (stats.free_sum <= 0.0) break;
    const double budget = n - plan.clamp_lo * static_cast<double>(stats.n_lo) -
                          plan.clamp_hi * static_cast<double>(stats.n_hi);
    const double next = budget / stats.free_sum;
    if (!(next > 0.0)) break;
    const bool settled = std::abs(next - c) <= 1e-13 * c;
    c = next;
    if (settled) break;
  }
  plan.scale = c;
  plan.rescale_rounds = rounds + 1;
  plan.clamped_records = stats.n_lo + stats.n_hi;
  return plan;
}

Subsample draw_poisson(const SubsamplingPlan& plan, const RecordSource& source, std::uint64_t seed,
                       unsigned threads) {
  const std::size_t p = source.covariate_dim();
  const std::uint64_t key = stream_key(seed);
  const auto& kern = kernels::active();

  struct Part {
    std::vector<std::size_t> rows;  // positions within the block
    std::vector<double> prob;
  };
  std::vector<Part> parts(source.block_count());
  std::vector<std::vector<std::size_t>> index(source.block_count());
  std::vector<std::vector<double>> xs(source.block_count()), ys(source.block_count());

  source.scan(
      [&](const RowBlock& block) {
        std::vector<std::size_t> idx;
        std::vector<double> prob;
        if (plan.design == Design::Uniform && block.indices == nullptr) {
          idx.resize(block.count);
          const std::size_t m = kern.bernoulli_select(key, block.first_index, block.count,
                                                      bernoulli_threshold(plan.rho), idx.data());
          idx.resize(m);
          prob.assign(m, plan.rho);
        } else if (plan.design == Design::Uniform) {
          const std::uint64_t k = bernoulli_threshold(plan.rho);
          for (std::size_t r = 0; r < block.count; ++r) {
            const std::size_t i = block.index(r);
            if (bernoulli_accept(mix64_keyed(key, i), k)) {
              idx.push_back(i);
              prob.push_back(plan.rho);
            }
          }
        } else {
          // No record is kept with probability above clamp_hi, so a hash that fails
          // against clamp_hi rejects the record before its score norm is computed.
          const std::uint64_t k_hi = bernoulli_threshold(plan.clamp_hi);
          std::vector<std::size_t> pos;
          if (block.indices == nullptr) {
            pos.resize(block.count);
            pos.resize(kern.bernoulli_select(key, block.first_index, block.count, k_hi, pos.data()));
            for (std::size_t& r : pos) r -= block.first_index;
          } else {
            for (std::size_t r = 0; r < block.count; ++r) {
              if (bernoulli_accept(mix64_keyed(key, block.index(r)), k_hi)) pos.push_back(r);
            }
          }
          std::vector<double> cx(pos.size() * p), cy(pos.size());
          for (std::size_t c = 0; c < pos.size(); ++c) {
            std::copy_n(block.x + pos[c] * p, p, cx.begin() + static_cast<std::ptrdiff_t>(c * p));
            cy[c] = block.y[pos[c]];
          }
          RowBlock cand;
          cand.count = pos.size();
          cand.p = p;
          cand.x = cx.data();
          cand.y = cy.data();
          std::vector<double> a;
          block_norms(*plan.model, plan.pilot, cand, a);
          for (std::size_t c = 0; c < pos.size(); ++c) {
            const double pi = std::clamp(plan.scale * a[c], plan.clamp_lo, plan.clamp_hi);
            const std::size_t i = block.index(pos[c]);
            if (bernoulli_accept(mix64_keyed(key, i), bernoulli_threshold(pi))) {
              idx.push_back(i);
              prob.push_back(pi);
            }
          }
        }
        // Copy the selected rows out of the block while it is alive.
        std::vector<double> bx, by;
        bx.reserve(idx.size() * p);
        by.reserve(idx.size());
        std::size_t r = 0;
        for (std::size_t i : idx) {
          while (block.index(r) != i) ++r;
          const Observation obs = block.row(r);
          bx.insert(bx.end(), obs.x.begin(), obs.x.end());
          by.push_back(obs.y);
        }
        index[block.block_id] = std::move(idx);
        parts[block.block_id].prob = std::move(prob);
        xs[block.block_id] = std::move(bx);
        ys[block.block_id] = std::move(by);
      },
      threads);

  Subsample out;
  out.p = p;
  out.expected_n = plan.n;
  std::size_t total = 0;
  for (const auto& v : index) total += v.size();
  out.index.reserve(total);
  out.prob.reserve(total);
  out.y.reserve(total);
  out.x.reserve(total * p);
  for (std::size_t b = 0; b < index.size(); ++b) {
    out.index.insert(out.index.end(), index[b].begin(), index[b].end());
    out.prob.insert(out.prob.end(), parts[b].prob.begin(), parts[b].prob.end());
    out.x.insert(out.x.end(), xs[b].begin(), xs[b].end());
    out.y.insert(out.y.end(), ys[b].begin(), ys[b].end());
  }
  return out;
}

PilotSplit draw_pilot(const RecordSource& source, std::size_t n0, std::uint64_t seed,
                      unsigned threads) {
  const std::size_t population = source.size();
  if (n0 == 0 || n0 > population) {
    throw InputError("pilot size must lie in [1, N], got " + std::to_string(n0) + " with N = " +
                     std::to_string(population));
  }
  const SubsamplingPlan plan = make_plan(Design::Uniform, source, static_cast<double>(n0));
  for (int attempt = 0; attempt <= kPilotRetries; ++attempt) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt);
    Subsample pilot = draw_poisson(plan, source, s, threads);
    if (!pilot.empty()) {
      std::vector<std::size_t> excluded = pilot.index;
      return PilotSplit{std::move(pilot), ExcludingSource(source, std::move(excluded)), s};
    }
  }
  throw NumericalError(NumericalFailure::EmptySubsample,
                       "pilot subsample empty after " + std::to_string(kPilotRetries + 1) +
                           " attempts");
}

}  // namespace massub
