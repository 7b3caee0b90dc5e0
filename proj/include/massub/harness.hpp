#pragma once

#include "massub/dataset.hpp"
#include "massub/estimator.hpp"
#include "massub/pipeline.hpp"

#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace massub {

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::UniformMle;
  MomentChoice moment = MomentChoice::None;
};

/// "UNI-Plain", "IPW-MAS-XY", "MSCL-MAS-OPT", ...
std::string estimator_label(const EstimatorSpec& spec);

/// The full grid {UNI, IPW, MSCL} x {Plain, MAS-XY, MAS-OPT}; MSCL is left out for Weibull.
std::vector<EstimatorSpec> standard_estimators(ModelFamily family);

struct ScenarioConfig {
  std::string model = "logistic";
  std::size_t p = 9;
  Parameter theta0;
  std::size_t N = 100000;
  double n = 2000;
  std::size_t n0 = 200;
  std::size_t replications = 200;
  std::uint64_t seed = 1;
  std::vector<EstimatorSpec> estimators;
  /// Generate one population and redraw only the subsamples.
  bool fixed_population = false;
  /// Workers across replications; results do not depend on it.
  unsigned threads = 1;
};

/// Built-in scenarios. Desk scale: N = 1e5, 200 replications; full: N = 1e6, 1000.
ScenarioConfig logistic_scenario(bool full = false);
ScenarioConfig weibull_scenario(bool full = false);

/// Throws InputError on an inconsistent configuration.
void validate(const ScenarioConfig& config);

std::shared_ptr<const ConditionalModel> scenario_model(const ScenarioConfig& config);

/// Covariates iid Uniform(-1,1); responses by inverse-CDF draws. Row i depends only on (seed, i).
Dataset generate_dataset(const ConditionalModel& model, const Parameter& theta0, std::size_t N,
                         std::uint64_t seed, unsigned threads = 1);

/// Writes the same records as CSV (header y,x1..xp) one row at a time.
void write_generated_csv(std::ostream& out, const ConditionalModel& model, const Parameter& theta0,
                         std::size_t N, std::uint64_t seed);

struct EstimatorSummary {
  std::string label;
  EstimatorSpec spec;
  Vector bias;
  Vector msd;
  Vector rmse;
  Vector esd;
  std::size_t successes = 0;
  std::size_t failures = 0;
  /// Mean wall time of the fit call; shared stages are charged to the first estimator of a replication.
  double mean_seconds = 0.0;
  /// theta_mas per successful replication, in replication order.
  std::vector<Parameter> estimates;
};

struct ReplicationReport {
  ScenarioConfig config;
  std::vector<EstimatorSummary> estimators;
  std::size_t failed_fits = 0;
  std::vector<std::string> failure_messages;
};

inline constexpr double kMaxFailureRate = 0.05;

/// Replication r runs on derive_seed(seed, r); its dataset and its pipeline take
/// derive_seed of that with these tags.
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kSessionStream = 2;

/// Runs the two-step pipeline per replication and aggregates bias, MSD, RMSE and ESD against theta0.
/// MSD uses divisor R, so RMSE^2 = bias^2 + MSD^2.
ReplicationReport run_replications(const ScenarioConfig& config);

struct PopulationConfig {
  std::shared_ptr<const ConditionalModel> model;
  Parameter theta0;
  EstimatorKind kind = EstimatorKind::UniformMle;
  /// Plan whose probability rule p(x,y) and rate rho define the population matrices.
  SubsamplingPlan plan;
  /// Auxiliary moment; null gives q = 0.
  std::shared_ptr<const MomentFunction> moment;
  std::size_t draws = 100000;
  std::uint64_t seed = 1;
  std::size_t batches = 20;
};

struct PopulationMatrices {
  Matrix G;
  Matrix Omega;
  Matrix V_h;
  Matrix V_S;
  Vector mu0;
  /// Ascending eigenvalues of V_S - V_h and their batch-means standard errors.
  Vector loewner_eigenvalues;
  Vector loewner_se;
};

/// Monte Carlo averages of the population G and Omega at theta0.
PopulationMatrices monte_carlo_population(const PopulationConfig& config);

struct TimingRow {
  std::string label;
  double median_seconds = 0.0;
  std::size_t runs = 0;
  /// Seconds per run; run r of every row comes from the same round.
  std::vector<double> seconds;
};

struct TimingConfig {
  ScenarioConfig scenario;
  std::size_t runs = 5;
  bool include_full_mle = true;
};

/// Wall-clock medians per estimator, each run a fresh pipeline on one generated dataset,
/// plus the whole-data Newton MLE baseline labelled "FULL-MLE".
std::vector<TimingRow> timing_report(const TimingConfig& config);

}  // namespace massub
