#include "massub/harness.hpp"

#include "massub/numerics.hpp"
#include "massub/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <optional>

namespace massub {
namespace {

using Index = Eigen::Index;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kFixedPopulationTag = 0xF1F1;

// Row i of a generated dataset. Draw k of row i is hash (i * (p+1) + k).
double generate_row(const ConditionalModel& model, const Parameter& theta0, std::uint64_t key,
                    std::size_t i, double* x) {
  const std::size_t p = model.covariate_dim();
  const std::uint64_t base = static_cast<std::uint64_t>(i) * (p + 1);
  for (std::size_t j = 0; j < p; ++j) x[j] = 2.0 * unit_open(mix64_keyed(key, base + j)) - 1.0;
  return model.sample_response(theta0, std::span<const double>(x, p),
                               unit_open(mix64_keyed(key, base + p)));
}

void append_number(std::string& line, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// (G^T Omega^-1 G)^-1 via the same solves as the MAS step.
Matrix gmm_variance(const Matrix& G, const Matrix& omega) {
  GmmAssembly a;
  a.d = static_cast<std::size_t>(G.cols());
  a.q = static_cast<std::size_t>(G.rows() - G.cols());
  a.G = G;
  a.Omega = omega;
  a.g = Vector::Zero(G.rows());
  a.theta_tilde = Vector::Zero(G.cols());
  a.n_expected = 1.0;
  return mas_step(a).v_hat;
}

struct PopulationSums {
  Matrix G;
  Matrix Omega;
  double count = 0.0;
};

Vector loewner_eigs(const Matrix& G, const Matrix& omega, Index d) {
  const Matrix vh = gmm_variance(G, omega);
  const Matrix vs = gmm_variance(G.topRows(d), omega.topLeftCorner(d, d));
  Eigen::SelfAdjointEigenSolver<Matrix> es(vs - vh);
  return es.eigenvalues();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::string estimator_label(const EstimatorSpec& spec) {
  std::string label;
  switch (spec.kind) {
    case EstimatorKind::UniformMle: label = "UNI"; break;
    case EstimatorKind::Ipw: label = "IPW"; break;
    case EstimatorKind::Mscl: label = "MSCL"; break;
  }
  switch (spec.moment) {
    case MomentChoice::None: return label + "-Plain";
    case MomentChoice::XY: return label + "-MAS-XY";
    case MomentChoice::Optimal: return label + "-MAS-OPT";
  }
  return label;
}

std::vector<EstimatorSpec> standard_estimators(ModelFamily family) {
  std::vector<EstimatorSpec> out;
  std::vector<EstimatorKind> kinds = {EstimatorKind::UniformMle, EstimatorKind::Ipw};
  if (family == ModelFamily::Logistic) kinds.push_back(EstimatorKind::Mscl);
  for (auto k : kinds) {
    for (auto m : {MomentChoice::None, MomentChoice::XY, MomentChoice::Optimal}) out.push_back({k, m});
  }
  return out;
}

ScenarioConfig logistic_scenario(bool full) {
  ScenarioConfig c;
  c.model = "logistic";
  c.p = 9;
  c.theta0 = Parameter::Constant(10, 0.2);
  c.theta0[0] = 0.0;
  c.N = full ? 1000000 : 100000;
  c.n = 2000;
  c.n0 = 200;
  c.replications = full ? 1000 : 200;
  c.estimators = standard_estimators(ModelFamily::Logistic);
  return c;
}

ScenarioConfig weibull_scenario(bool full) {
  ScenarioConfig c;
  c.model = "weibull";
  c.p = 9;
  c.theta0 = Parameter::Constant(11, 0.2);
  c.theta0[0] = 0.5;
  c.theta0[1] = 0.0;
  c.N = full ? 1000000 : 100000;
  c.n = 2000;
  c.n0 = 200;
  c.replications = full ? 1000 : 200;
  c.estimators = standard_estimators(ModelFamily::Weibull);
  return c;
}

std::shared_ptr<const ConditionalModel> scenario_model(const ScenarioConfig& config) {
  return make_model(config.model, config.p);
}

void validate(const ScenarioConfig& config) {
  const auto model = scenario_model(config);
  if (static_cast<std::size_t>(config.theta0.size()) != model->dim()) {
    throw InputError("theta0 has length " + std::to_string(config.theta0.size()) + ", the " +
                     config.model + " model needs " + std::to_string(model->dim()));
  }
  try {
    model->check_parameter(config.theta0);
  } catch (const NumericalError& e) {
    throw InputError(std::string("invalid theta0: ") + e.what());
  }
  if (config.replications < 1) throw InputError("replications must be at least 1");
  if (!(config.n > 0.0)) throw InputError("subsample size n must be positive");
  if (static_cast<double>(config.n0) + config.n > static_cast<double>(config.N)) {
    throw InputError("n0 + n must not exceed N");
  }
  if (config.estimators.empty()) throw InputError("no estimators selected");
  for (const auto& e : config.estimators) {
    check_estimator(e.kind, *model);
    if (config.n0 == 0 && (e.kind != EstimatorKind::UniformMle || e.moment == MomentChoice::Optimal)) {
      throw InputError(estimator_label(e) + " needs a pilot subsample (n0 > 0)");
    }
  }
}

Dataset generate_dataset(const ConditionalModel& model, const Parameter& theta0, std::size_t N,
                         std::uint64_t seed, unsigned threads) {
  if (N == 0) throw InputError("dataset size must be at least 1");
  model.check_parameter(theta0);
  const std::size_t p = model.covariate_dim();
  const std::uint64_t key = stream_key(seed);
  std::vector<double> x(N * p), y(N);
  const std::size_t chunks = (N + kBlockRows - 1) / kBlockRows;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t end = std::min(N, (c + 1) * kBlockRows);
    for (std::size_t i = c * kBlockRows; i < end; ++i) {
      y[i] = generate_row(model, theta0, key, i, x.data() + i * p);
    }
  });
  return Dataset(p, std::move(x), std::move(y));
}

void write_generated_csv(std::ostream& out, const ConditionalModel& model, const Parameter& theta0,
                         std::size_t N, std::uint64_t seed) {
  model.check_parameter(theta0);
  const std::size_t p = model.covariate_dim();
  const std::uint64_t key = stream_key(seed);
  std::string line = "y";
  for (std::size_t j = 1; j <= p; ++j) line += ",x" + std::to_string(j);
  line += '\n';
  out << line;
  std::vector<double> x(p);
  for (std::size_t i = 0; i < N; ++i) {
    const double y = generate_row(model, theta0, key, i, x.data());
    line.clear();
    append_number(line, y);
    for (double v : x) {
      line += ',';
      append_number(line, v);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw InputError("failed writing generated CSV");
}

ReplicationReport run_replications(const ScenarioConfig& config) {
  validate(config);
  const auto model = scenario_model(config);
  const std::size_t R = config.replications;
  const std::size_t E = config.estimators.size();

  struct Outcome {
    std::optional<Parameter> theta;
    Vector se;
    double seconds = 0.0;
    std::string error;
  };
  std::vector<std::vector<Outcome>> outcomes(R, std::vector<Outcome>(E));

  std::optional<Dataset> fixed;
  if (config.fixed_population) {
    fixed.emplace(generate_dataset(*model, config.theta0, config.N,
                                   derive_seed(config.seed, kFixedPopulationTag), config.threads));
  }

  parallel_for(R, config.threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(config.seed, r);
    std::optional<Dataset> local;
    if (!fixed) {
      local.emplace(generate_dataset(*model, config.theta0, config.N, derive_seed(rep_seed, kDataStream)));
    }
    const Dataset& data = fixed ? *fixed : *local;
    FitSession session(data, model, {config.n, config.n0, derive_seed(rep_seed, kSessionStream), 1});
    for (std::size_t e = 0; e < E; ++e) {
      const auto t0 = Clock::now();
      try {
        const FitResult fit = session.fit(config.estimators[e].kind, config.estimators[e].moment);
        outcomes[r][e].theta = fit.theta_mas;
        outcomes[r][e].se = fit.std_errors;
      } catch (const NumericalError& err) {
        outcomes[r][e].error = err.what();
      }
      outcomes[r][e].seconds = seconds_since(t0);
    }
  });

  ReplicationReport report;
  report.config = config;
  const auto d = static_cast<Index>(model->dim());
  for (std::size_t e = 0; e < E; ++e) {
    EstimatorSummary s;
    s.spec = config.estimators[e];
    s.label = estimator_label(s.spec);
    Vector mean = Vector::Zero(d), esd = Vector::Zero(d);
    double seconds = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const Outcome& o = outcomes[r][e];
      if (!o.theta) {
        ++s.failures;
        report.failure_messages.push_back(s.label + " replication " + std::to_string(r) + ": " +
                                          o.error);
        continue;
      }
      s.estimates.push_back(*o.theta);
      mean += *o.theta;
      esd += o.se;
      seconds += o.seconds;
    }
    s.successes = s.estimates.size();
    report.failed_fits += s.failures;
    if (static_cast<double>(s.failures) > kMaxFailureRate * static_cast<double>(R)) {
      throw Error(s.label + " failed in " + std::to_string(s.failures) + " of " + std::to_string(R) +
                  " replications (first: " + report.failure_messages.front() + ")");
    }
    const double k = static_cast<double>(s.successes);
    mean /= k;
    s.bias = mean - config.theta0;
    Vector ss = Vector::Zero(d), se2 = Vector::Zero(d);
    for (const auto& t : s.estimates) {
      ss += (t - mean).cwiseAbs2();
      se2 += (t - config.theta0).cwiseAbs2();
    }
    s.msd = (ss / k).cwiseSqrt();
    s.rmse = (se2 / k).cwiseSqrt();
    s.esd = esd / k;
    s.mean_seconds = seconds / k;
    report.estimators.push_back(std::move(s));
  }
  return report;
}

PopulationMatrices monte_carlo_population(const PopulationConfig& config) {
  if (!config.model) throw InputError("population oracle needs a model");
  if (config.draws < 2 * config.batches || config.batches < 2) {
    throw InputError("population oracle needs at least two draws per batch and two batches");
  }
  const ConditionalModel& model = *config.model;
  check_estimator(config.kind, model);
  const auto d = static_cast<Index>(model.dim());
  const MomentFunction* h = config.moment.get();
  const Index q = h != nullptr ? static_cast<Index>(h->q()) : 0;
  const double rho = config.plan.rho;
  const Dataset data = generate_dataset(model, config.theta0, config.draws, config.seed);
  const std::size_t M = config.draws;

  PopulationMatrices out;
  out.mu0 = Vector::Zero(q);
  Vector m(q), hv(q), v(q), e(q), u(d);
  Matrix mj(q, d), uj(d, d);
  if (q > 0) {
    for (std::size_t i = 0; i < M; ++i) {
      cond_mean(*h, model, config.theta0, data.row(i).x, m);
      out.mu0 += m;
    }
    out.mu0 /= static_cast<double>(M);
  }

  const std::size_t B = config.batches;
  std::vector<PopulationSums> batch(B);
  for (auto& b : batch) {
    b.G = Matrix::Zero(d + q, d);
    b.Omega = Matrix::Zero(d + q, d + q);
  }
  for (std::size_t i = 0; i < M; ++i) {
    PopulationSums& b = batch[i * B / M];
    const Observation obs = data.row(i);
    const double p = config.plan.probability(obs);
    const double f = p / rho;
    eval_u(config.kind, model, config.plan, config.theta0, obs, p, u);
    eval_u_jac(config.kind, model, config.plan, config.theta0, obs, p, uj);
    b.G.topRows(d) += f * uj;
    b.Omega.topLeftCorner(d, d) += f * (u * u.transpose());
    if (q > 0) {
      cond_mean(*h, model, config.theta0, obs.x, m);
      cond_mean_jac(*h, model, config.theta0, obs.x, mj);
      h->eval_h(obs, hv);
      v = (rho / p) * (m - out.mu0);
      e = hv - out.mu0;
      b.G.bottomRows(q) += mj;
      b.Omega.topRightCorner(d, q) += f * (u * (v - rho * e).transpose());
      b.Omega.bottomRightCorner(q, q) += f * (v * v.transpose()) -
                                         p * (v * e.transpose() + e * v.transpose()) +
                                         rho * (e * e.transpose());
    }
    b.count += 1.0;
  }
  auto finish = [&](Matrix& G, Matrix& omega, double count) {
    G /= count;
    omega /= count;
    if (q > 0) omega.bottomLeftCorner(q, d) = omega.topRightCorner(d, q).transpose();
    omega = (0.5 * (omega + omega.transpose())).eval();
  };

  out.G = Matrix::Zero(d + q, d);
  out.Omega = Matrix::Zero(d + q, d + q);
  double total = 0.0;
  for (const auto& b : batch) {
    out.G += b.G;
    out.Omega += b.Omega;
    total += b.count;
  }
  finish(out.G, out.Omega, total);
  out.V_h = gmm_variance(out.G, out.Omega);
  out.V_S = gmm_variance(out.G.topRows(d), out.Omega.topLeftCorner(d, d));
  out.loewner_eigenvalues = loewner_eigs(out.G, out.Omega, d);

  Matrix eigs(d, static_cast<Index>(B));
  for (std::size_t k = 0; k < B; ++k) {
    Matrix G = batch[k].G, omega = batch[k].Omega;
    finish(G, omega, batch[k].count);
    eigs.col(static_cast<Index>(k)) = loewner_eigs(G, omega, d);
  }
  const Vector mean = eigs.rowwise().mean();
  const Vector var = (eigs.colwise() - mean).cwiseAbs2().rowwise().sum() / static_cast<double>(B - 1);
  out.loewner_se = (var / static_cast<double>(B)).cwiseSqrt();
  return out;
}

std::vector<TimingRow> timing_report(const TimingConfig& config) {
  validate(config.scenario);
  if (config.runs < 1) throw InputError("timing needs at least one run");
  const ScenarioConfig& sc = config.scenario;
  const auto model = scenario_model(sc);
  const Dataset data = generate_dataset(*model, sc.theta0, sc.N, derive_seed(sc.seed, kDataStream),
                                        default_threads());
  // Runs go round-robin over the estimators so that load drift on the machine hits them alike.
  const std::size_t cells = sc.estimators.size() + (config.include_full_mle ? 1 : 0);
  std::vector<std::vector<double>> t(cells);
  for (std::size_t run = 0; run < config.runs; ++run) {
    for (std::size_t k = 0; k < sc.estimators.size(); ++k) {
      const auto t0 = Clock::now();
      FitSession session(data, model, {sc.n, sc.n0, derive_seed(sc.seed, 100 + run), 1});
      session.fit(sc.estimators[k].kind, sc.estimators[k].moment);
      t[k].push_back(seconds_since(t0));
    }
    if (config.include_full_mle) {
      const auto t0 = Clock::now();
      solve_full_mle(*model, data, model->default_initial(), 1);
      t.back().push_back(seconds_since(t0));
    }
  }
  std::vector<TimingRow> rows;
  for (std::size_t k = 0; k < sc.estimators.size(); ++k) {
    rows.push_back({estimator_label(sc.estimators[k]), median(t[k]), config.runs, t[k]});
  }
  if (config.include_full_mle) rows.push_back({"FULL-MLE", median(t.back()), config.runs, t.back()});
  return rows;
}

}  // namespace massub
