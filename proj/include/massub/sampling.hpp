#pragma once

#include "massub/dataset.hpp"
#include "massub/model.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace massub {

enum class Design {
  Uniform,
  /// p proportional to ||psi(x, y; pilot)||, clamped to [0.1 rho, min(1, 10 rho)].
  ScoreNorm,
};

inline constexpr double kClampLowFactor = 0.1;
inline constexpr double kClampHighFactor = 10.0;
inline constexpr int kMaxRescaleRounds = 20;
/// Norms kept from each tail during the normalizer pass. Clamp rounds whose
/// thresholds fall inside the kept tails need no further pass over the data.
inline constexpr std::size_t kTailKeep = std::size_t{1} << 12;

/// Poisson subsampling rule p(x,y). Immutable once built.
struct SubsamplingPlan {
  Design design = Design::Uniform;
  double n = 0.0;
  std::size_t population = 0;
  double rho = 0.0;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  /// ScoreNorm: p = clamp(scale * ||psi||).
  double scale = 0.0;
  Parameter pilot;
  std::shared_ptr<const ConditionalModel> model;
  /// Set when a ScoreNorm request degenerated to the uniform rule (all score norms zero).
  bool fell_back_to_uniform = false;
  int rescale_rounds = 0;
  /// Clamp rounds that needed their own pass because the kept tails did not cover them.
  int extra_passes = 0;
  /// Number of records whose probability sits at a clamp bound.
  std::size_t clamped_records = 0;

  double probability(const Observation& obs) const;
  double ipw_weight(double p) const noexcept { return rho / p; }
};

/// ||psi(x,y; pilot)|| as used by ScoreNorm plans.
double score_norm(const ConditionalModel& model, const Parameter& pilot, const Observation& obs);

/// Builds a plan over `source` with expected size n (0 < n <= N).
/// ScoreNorm needs a model and pilot; it normalises with clamp-aware rescaling
/// so that sum_i p_i = n within the clamp bounds.
SubsamplingPlan make_plan(Design design, const RecordSource& source, double n,
                          std::shared_ptr<const ConditionalModel> model = nullptr,
                          const std::optional<Parameter>& pilot = std::nullopt,
                          unsigned threads = 1);

/// Realised Poisson subsample; indices strictly increasing.
struct Subsample {
  std::size_t p = 0;
  std::vector<std::size_t> index;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> prob;
  double expected_n = 0.0;

  std::size_t size() const noexcept { return index.size(); }
  bool empty() const noexcept { return index.empty(); }
  Observation row(std::size_t k) const noexcept {
    return {std::span<const double>(x.data() + k * p, p), y[k]};
  }
};

/// Includes record i iff the counter hash of (seed, i) falls below p_i.
/// A pure function of (plan, source, seed).
Subsample draw_poisson(const SubsamplingPlan& plan, const RecordSource& source, std::uint64_t seed,
                       unsigned threads = 1);

struct PilotSplit {
  Subsample pilot;
  ExcludingSource remainder;
  std::uint64_t seed_used = 0;
};

inline constexpr int kPilotRetries = 8;

/// Uniform pilot at rate n0/N; the remainder view excludes the pilot records.
/// An empty pilot is redrawn with seed+1 up to 8 times.
PilotSplit draw_pilot(const RecordSource& source, std::size_t n0, std::uint64_t seed,
                      unsigned threads = 1);

}  // namespace massub
