#include "massub/cli.hpp"

#include "massub/csv.hpp"
#include "massub/harness.hpp"
#include "massub/pipeline.hpp"
#include "massub/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>

namespace massub {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string config;
  std::string out = ".";

  // fit
  std::string model;
  std::string data;
  std::string response = "y";
  double n = 0.0;
  std::size_t pilot = 200;
  std::string estimator = "uni";
  std::string moment = "opt";
  bool jitter = false;

  // simulate
  std::string scenario = "logistic-paper";
  bool desk = false;
  bool full = false;
  std::size_t replications = 0;
  std::size_t N = 0;
  std::size_t n0 = 0;
  bool fixed_population = false;
  bool svg = false;
  std::vector<double> n_grid = {1000, 2000, 5000, 10000};
  bool timing = false;
  std::size_t timing_runs = 5;

  // gen-data
  std::size_t p = 9;
  std::vector<double> theta0;
  std::string file;
};

const std::set<std::string> kGlobalKeys = {"seed", "threads", "out"};
const std::map<std::string, std::set<std::string>> kCommandKeys = {
    {"fit", {"model", "data", "response", "n", "pilot", "estimator", "moment", "jitter"}},
    {"simulate",
     {"scenario", "desk", "full", "replications", "N", "n", "n0", "fixed_population", "svg", "n_grid",
      "timing", "timing_runs"}},
    {"gen-data", {"model", "N", "p", "theta0", "file"}},
};

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

std::string scalar_text(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_number(v.get<double>());
  throw InputError("config key '" + key + "' has an unsupported value type");
}

// Turns config entries into command-line tokens for keys not already given as flags.
std::vector<std::string> config_tokens(const std::string& path, const std::string& command,
                                       const std::set<std::string>& given) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw InputError("config file must hold a JSON object");
  const auto& allowed = kCommandKeys.at(command);
  std::vector<std::string> tokens;
  for (const auto& [key, value] : doc.items()) {
    if (!kGlobalKeys.count(key) && !allowed.count(key)) {
      throw InputError("unknown config key '" + key + "' for command " + command);
    }
    const std::string flag = flag_name(key);
    if (given.count(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back(flag);
    } else if (value.is_array()) {
      tokens.push_back(flag);
      for (const auto& item : value) tokens.push_back(scalar_text(item, key));
    } else {
      tokens.push_back(flag);
      tokens.push_back(scalar_text(value, key));
    }
  }
  return tokens;
}

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "uni") return EstimatorKind::UniformMle;
  if (s == "ipw") return EstimatorKind::Ipw;
  if (s == "mscl") return EstimatorKind::Mscl;
  throw InputError("unknown estimator '" + s + "' (expected uni, ipw or mscl)");
}

MomentChoice parse_moment(const std::string& s) {
  if (s == "none") return MomentChoice::None;
  if (s == "xy") return MomentChoice::XY;
  if (s == "opt") return MomentChoice::Optimal;
  throw InputError("unknown moment '" + s + "' (expected none, xy or opt)");
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory '" + dir + "'");
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  return f;
}

json to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

int cmd_fit(const Options& o, std::ostream& out) {
  if (o.model.empty()) throw InputError("fit needs --model");
  if (o.data.empty()) throw InputError("fit needs --data");
  if (!(o.n > 0.0)) throw InputError("fit needs a positive --n");
  const EstimatorKind kind = parse_estimator(o.estimator);
  const MomentChoice moment = parse_moment(o.moment);
  ensure_out_dir(o.out);
  const fs::path result_path = fs::path(o.out) / "result.json";

  // Covariate count comes from the header; the model is built to match it.
  const std::size_t p = CsvSource::header_covariates(o.data, o.response).size();
  std::shared_ptr<const ConditionalModel> model = make_model(o.model, p);
  check_estimator(kind, *model);
  const CsvSource source(o.data, o.response, model.get());
  std::ofstream result_file = open_output(result_path);

  FitSession session(source, model, {o.n, o.pilot, o.seed, o.threads});
  const FitResult r = session.fit(kind, moment, o.jitter);
  const auto& d = r.diagnostics;

  json j;
  j["schema"] = 1;
  j["model"] = o.model;
  j["estimator"] = o.estimator;
  j["moment"] = o.moment;
  j["n"] = o.n;
  j["pilot"] = o.pilot;
  j["seed"] = o.seed;
  j["theta_mas"] = to_json(r.theta_mas);
  j["theta_tilde"] = to_json(r.theta_tilde);
  j["std_errors"] = to_json(r.std_errors);
  j["pilot_estimate"] = r.pilot ? to_json(*r.pilot) : json(nullptr);
  j["diagnostics"] = {
      {"newton_iterations", d.newton_iterations},
      {"pilot_newton_iterations", d.pilot_iterations},
      {"realized_n", d.realized_n},
      {"expected_n", d.expected_n},
      {"pilot_size", d.pilot_size},
      {"remainder_size", d.remainder_size},
      {"records", source.size()},
      {"plan_fell_back_to_uniform", d.plan_fell_back_to_uniform},
      {"clamped_records", d.clamped_records},
      {"rescale_rounds", d.rescale_rounds},
      {"jitter", d.jitter},
      {"q", d.q},
      {"condition_omega", d.condition_omega},
      {"data_passes", source.passes()},
      {"warnings", d.warnings},
  };
  result_file << j.dump(2) << '\n';
  if (!result_file) throw InputError("failed writing '" + result_path.string() + "'");

  out << "model " << o.model << ", estimator " << o.estimator << ", moment " << o.moment
      << ", realized n " << d.realized_n << " of " << source.size() << " records\n";
  out << std::left << std::setw(12) << "coordinate" << std::setw(26) << "theta_tilde" << std::setw(26)
      << "theta_mas" << "std_error\n";
  for (Eigen::Index k = 0; k < r.theta_mas.size(); ++k) {
    out << std::setw(12) << (k + 1) << std::setw(26) << format_number(r.theta_tilde[k])
        << std::setw(26) << format_number(r.theta_mas[k]) << format_number(r.std_errors[k]) << '\n';
  }
  for (const auto& w : d.warnings) out << "warning: " << w << '\n';
  out << "wrote " << result_path.string() << '\n';
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  if (o.desk && o.full) throw InputError("--desk and --full are mutually exclusive");
  ScenarioConfig c;
  if (o.scenario == "logistic-paper") {
    c = logistic_scenario(o.full);
  } else if (o.scenario == "weibull-paper") {
    c = weibull_scenario(o.full);
  } else {
    throw InputError("unknown scenario '" + o.scenario + "' (expected logistic-paper or weibull-paper)");
  }
  c.seed = o.seed;
  c.threads = o.threads;
  c.fixed_population = o.fixed_population;
  if (o.replications > 0) c.replications = o.replications;
  if (o.N > 0) c.N = o.N;
  if (o.n > 0.0) c.n = o.n;
  if (o.n0 > 0) c.n0 = o.n0;
  validate(c);
  ensure_out_dir(o.out);
  const fs::path dir(o.out);
  std::ofstream report_file = open_output(dir / "report.csv");
  std::ofstream timing_file = open_output(dir / "timings.csv");

  const ReplicationReport report = run_replications(c);
  write_report_csv(report, report_file);
  if (o.timing) {
    write_timings_csv(timing_report({c, o.timing_runs, true}), timing_file);
  } else {
    write_timings_csv(report, timing_file);
  }

  out << o.scenario << ": N " << c.N << ", n " << format_number(c.n) << ", n0 " << c.n0 << ", "
      << c.replications << " replications, " << report.failed_fits << " failed fits\n";
  out << std::left << std::setw(16) << "estimator" << std::setw(24) << "max|bias|" << std::setw(24)
      << "mean MSD" << "mean ESD\n";
  for (const auto& s : report.estimators) {
    out << std::setw(16) << s.label << std::setw(24) << format_number(s.bias.cwiseAbs().maxCoeff())
        << std::setw(24) << format_number(s.msd.mean()) << format_number(s.esd.mean()) << '\n';
  }

  if (o.svg) {
    std::vector<RmsePoint> points;
    for (double n : o.n_grid) {
      ScenarioConfig cn = c;
      cn.n = n;
      RmsePoint pt{n, run_replications(cn)};
      std::ofstream f = open_output(dir / ("report_n" + format_number(n) + ".csv"));
      write_report_csv(pt.report, f);
      points.push_back(std::move(pt));
    }
    std::ofstream svg = open_output(dir / "rmse.svg");
    write_rmse_svg(points, svg);
  }
  out << "wrote " << (dir / "report.csv").string() << '\n';
  return kExitOk;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  if (o.N == 0) throw InputError("gen-data needs a positive --N");
  const std::string model_name = o.model.empty() ? "logistic" : o.model;
  const auto model = make_model(model_name, o.p);
  Parameter theta0;
  if (!o.theta0.empty()) {
    theta0 = Eigen::Map<const Vector>(o.theta0.data(), static_cast<Eigen::Index>(o.theta0.size()));
  } else {
    theta0 = Parameter::Constant(static_cast<Eigen::Index>(model->dim()), 0.2);
    if (model->family() == ModelFamily::Logistic) {
      theta0[0] = 0.0;
    } else {
      theta0[0] = 0.5;
      theta0[1] = 0.0;
    }
  }
  try {
    model->check_parameter(theta0);
  } catch (const NumericalError& e) {
    throw InputError(std::string("invalid --theta0: ") + e.what());
  }
  fs::path path;
  if (o.file.empty()) {
    ensure_out_dir(o.out);
    path = fs::path(o.out) / "data.csv";
  } else {
    path = o.file;
  }
  std::ofstream f = open_output(path);
  write_generated_csv(f, *model, theta0, o.N, o.seed);
  f.close();
  if (!f) throw InputError("failed writing '" + path.string() + "'");
  out << "wrote " << o.N << " rows to " << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  Options o;
  o.threads = default_threads();

  CLI::App app{"Moment-assisted subsampling estimators"};
  app.require_subcommand(1);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--threads", o.threads, "Worker threads (results do not depend on it)");
  app.add_option("--config", o.config, "JSON file with option values; flags override it");
  app.add_option("--out", o.out, "Output directory");

  auto* fit = app.add_subcommand("fit", "Fit a model on a CSV file");
  fit->fallthrough();
  fit->add_option("--model", o.model, "logistic or weibull");
  fit->add_option("--data", o.data, "CSV file with a header line");
  fit->add_option("--response", o.response, "Response column name");
  fit->add_option("--n", o.n, "Expected subsample size");
  fit->add_option("--pilot", o.pilot, "Pilot size; 0 skips the pilot");
  fit->add_option("--estimator", o.estimator, "uni, ipw or mscl");
  fit->add_option("--moment", o.moment, "none, xy or opt");
  fit->add_flag("--jitter", o.jitter, "Add a small ridge to the moment covariance block");

  auto* sim = app.add_subcommand("simulate", "Run a simulation scenario");
  sim->fallthrough();
  sim->add_option("--scenario", o.scenario, "logistic-paper or weibull-paper");
  sim->add_flag("--desk", o.desk, "Desk scale (default)");
  sim->add_flag("--full", o.full, "Full scale: N = 1e6, 1000 replications");
  sim->add_option("--replications", o.replications);
  sim->add_option("--N", o.N, "Population size");
  sim->add_option("--n", o.n, "Expected subsample size");
  sim->add_option("--n0", o.n0, "Pilot size");
  sim->add_flag("--fixed-population", o.fixed_population, "Reuse one population across replications");
  sim->add_flag("--svg", o.svg, "Also run the n grid and draw rmse.svg");
  sim->add_option("--n-grid", o.n_grid, "Subsample sizes for --svg");
  sim->add_flag("--timing", o.timing, "Write wall-clock medians from fresh runs to timings.csv");
  sim->add_option("--timing-runs", o.timing_runs);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic CSV");
  gen->fallthrough();
  gen->add_option("--model", o.model, "logistic or weibull");
  gen->add_option("--N", o.N, "Number of rows");
  gen->add_option("--p", o.p, "Number of covariates");
  gen->add_option("--theta0", o.theta0, "True parameter");
  gen->add_option("--file", o.file, "Output file (default <out>/data.csv)");

  try {
    std::vector<std::string> args = args_in;
    std::set<std::string> given;
    std::string config_path;
    std::string command;
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (command.empty() && kCommandKeys.count(a)) command = a;
      if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
      if (a == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
    }
    if (!config_path.empty() && !command.empty()) {
      const auto extra = config_tokens(config_path, command, given);
      args.insert(args.end(), extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (o.threads == 0) o.threads = 1;

    if (fit->parsed()) return cmd_fit(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    return cmd_gen_data(o, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace massub
