#pragma once

#include "massub/estimator.hpp"
#include "massub/moments.hpp"
#include "massub/sampling.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace massub {

enum class MomentChoice { None, XY, Optimal };

std::string_view to_string(MomentChoice choice) noexcept;

/// Plan design each estimator is paired with: UniformMle draws uniformly,
/// Ipw and Mscl draw by score norm.
Design design_for(EstimatorKind kind) noexcept;

struct SessionConfig {
  /// Expected main subsample size.
  double n = 0.0;
  /// Pilot size; 0 runs without a pilot (uniform estimator, no optimal moment).
  std::size_t n0 = 0;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct FitDiagnostics {
  int newton_iterations = 0;
  int pilot_iterations = 0;
  std::size_t realized_n = 0;
  double expected_n = 0.0;
  std::size_t pilot_size = 0;
  std::uint64_t pilot_seed = 0;
  std::size_t remainder_size = 0;
  bool plan_fell_back_to_uniform = false;
  std::size_t clamped_records = 0;
  int rescale_rounds = 0;
  double jitter = 0.0;
  std::size_t q = 0;
  double condition_omega = 1.0;
  std::vector<std::string> warnings;
};

struct FitResult {
  EstimatorKind kind = EstimatorKind::UniformMle;
  MomentChoice moment = MomentChoice::None;
  Parameter theta_tilde;
  /// Equals theta_tilde for MomentChoice::None.
  Parameter theta_mas;
  std::optional<Parameter> pilot;
  Matrix v_hat;
  Vector std_errors;
  FitDiagnostics diagnostics;
};

/// One end-to-end run over a record source. Intermediate products (pilot,
/// plans, draws, plain fits, whole-data moments) are computed on first use and
/// shared across fit() calls, so several estimators see the same subsample.
class FitSession {
 public:
  FitSession(const RecordSource& source, std::shared_ptr<const ConditionalModel> model,
             SessionConfig config);

  FitResult fit(EstimatorKind kind, MomentChoice moment, bool jitter = false);

  const ConditionalModel& model() const noexcept { return *model_; }
  /// Records the main draw comes from: the remainder after the pilot, or the whole source.
  const RecordSource& main_source();
  const std::optional<Parameter>& pilot_estimate();
  const SubsamplingPlan& plan(Design design);
  const Subsample& subsample(Design design);
  const NewtonResult& plain_fit(EstimatorKind kind);
  const MomentFunction& moment_function(MomentChoice choice);
  const Vector& mu_hat(MomentChoice choice);

 private:
  static std::size_t slot(Design d) noexcept { return static_cast<std::size_t>(d); }
  static std::size_t slot(EstimatorKind k) noexcept { return static_cast<std::size_t>(k); }
  static std::size_t slot(MomentChoice m) noexcept { return static_cast<std::size_t>(m); }

  void ensure_pilot();

  const RecordSource& source_;
  std::shared_ptr<const ConditionalModel> model_;
  SessionConfig config_;

  bool pilot_done_ = false;
  std::optional<PilotSplit> split_;
  std::optional<Parameter> pilot_theta_;
  int pilot_iterations_ = 0;

  std::array<std::optional<SubsamplingPlan>, 2> plans_;
  std::array<std::optional<Subsample>, 2> draws_;
  std::array<std::optional<NewtonResult>, 3> plain_;
  std::array<std::optional<MomentFunction>, 3> moments_;
  std::array<std::optional<Vector>, 3> mu_;
};

/// Seeds of the pipeline stages, derived from the session seed.
inline constexpr std::uint64_t kPilotStream = 1;
inline constexpr std::uint64_t kMainStream = 2;

}  // namespace massub
