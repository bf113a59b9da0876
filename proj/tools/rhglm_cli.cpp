// rhglm: fit, sample and simulate the log-Pareto-tailed gamma GLM from the
// command line.
//
//   rhglm fit --model robust --c 1.6 --data d.csv --response cost
//   rhglm bayes --model robust --data d.csv --response cost --chain-csv chain.csv
//   rhglm simulate --scenario S1 --n 20 --replicates 1000 --seed 7 --format csv
//   rhglm simulate --sweep --c 1.6
//
// Exit codes: 0 success, 1 malformed input (an error JSON is printed on
// stdout), 2 estimator did not converge.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rhglm/rhglm.hpp"

namespace {

using rhglm::Json;

constexpr int kExitData = 1;
constexpr int kExitNoConvergence = 2;

struct Common {
  std::string output;
  std::string format = "json";
  std::uint64_t seed = 1;
};

struct DataArgs {
  std::string data;
  std::string response;
  bool no_intercept = false;
  std::vector<std::string> exclude;
};

struct FitArgs {
  Common common;
  DataArgs data;
  std::string model = "robust";
  double c = 1.6;
  std::string cantoni_nu = "estimate";
};

struct BayesArgs {
  Common common;
  DataArgs data;
  std::string model = "robust";
  double c = 1.6;
  double prior_alpha = 2.0;
  double prior_theta = 50.0;
  int iterations = 100000;
  double burn_in = 0.10;
  double step_size = 0.01;
  int leapfrog = 20;
  int adapt = 5000;
  double hpd = 0.95;
  std::string chain_csv;
};

struct SimulateArgs {
  Common common;
  std::string scenario = "S1";
  std::vector<int> n{20};
  int replicates = 1000;
  std::vector<double> c{1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0};
  double cantoni_c = 1.345;
  bool no_cantoni = false;
  bool shift_after_leverage = false;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool sweep = false;
  std::vector<double> y_grid;
  int sweep_n = 20;
};

class OutputSink {
 public:
  explicit OutputSink(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) throw rhglm::DataError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

int fail(const std::string& kind, const std::string& message) {
  Json err;
  err["version"] = rhglm::kVersion;
  err["error"] = kind;
  err["message"] = message;
  std::cout << err.dump(2) << '\n';
  std::cerr << "rhglm: " << message << '\n';
  return kExitData;
}

void emit_json(const Common& common, const Json& j) {
  OutputSink sink(common.output);
  sink.stream() << j.dump(2) << '\n';
}

// CSV outputs carry their provenance in leading '#' comment lines.
void emit_csv_header(std::ostream& os, std::uint64_t seed, const Json& config) {
  os << "# rhglm " << rhglm::kVersion << " seed=" << seed << '\n';
  os << "# config " << config.dump() << '\n';
}

Json data_config(const DataArgs& d) {
  return Json{{"data", d.data}, {"response", d.response}, {"intercept", !d.no_intercept}, {"exclude", d.exclude}};
}

rhglm::Dataset load(const DataArgs& d, bool validate = true) {
  rhglm::DesignOptions opt;
  opt.response = d.response;
  opt.intercept = !d.no_intercept;
  opt.exclude = d.exclude;
  opt.validate = validate;
  return rhglm::read_dataset(d.data, opt);
}

Json names_json(const rhglm::Dataset& d) {
  Json a = Json::array();
  for (const auto& n : d.column_names) a.push_back(n);
  return a;
}

// ---------------------------------------------------------------------------

int cmd_fit(const FitArgs& a) {
  Json config = data_config(a.data);
  config["command"] = "fit";
  config["model"] = a.model;
  config["c"] = a.c;
  if (a.model == "cantoni") config["cantoni_nu"] = a.cantoni_nu;

  const rhglm::Dataset data = load(a.data);
  const rhglm::FitMethod method = rhglm::fit_method_from_string(a.model);
  rhglm::FitResult fit;
  switch (method) {
    case rhglm::FitMethod::GammaMLE: fit = rhglm::fit_gamma_mle(data); break;
    case rhglm::FitMethod::RobustMLE: fit = rhglm::fit_robust_mle(data, a.c); break;
    case rhglm::FitMethod::Cantoni: {
      rhglm::CantoniNu nu = rhglm::CantoniNu::estimate();
      if (a.cantoni_nu != "estimate") {
        const auto v = rhglm::parse_number(a.cantoni_nu);
        if (!v || !(*v > 0.0)) throw rhglm::DomainError("--cantoni-nu must be 'estimate' or a positive number");
        nu = rhglm::CantoniNu::fixed(*v);
      }
      fit = rhglm::fit_cantoni(data, a.c, nu);
      break;
    }
  }
  const Eigen::VectorXd resid = rhglm::pearson_residuals(data, fit.params.beta, fit.params.nu);

  if (a.common.format == "csv") {
    OutputSink sink(a.common.output);
    auto& os = sink.stream();
    emit_csv_header(os, a.common.seed, config);
    os << "parameter,estimate\n";
    for (Eigen::Index j = 0; j < fit.params.beta.size(); ++j)
      os << data.column_names[static_cast<std::size_t>(j)] << ',' << rhglm::format_number(fit.params.beta[j]) << '\n';
    os << "nu," << rhglm::format_number(fit.params.nu) << '\n';
    os << "loglik," << rhglm::format_number(fit.log_likelihood) << '\n';
  } else {
    Json payload = rhglm::to_json(fit);
    payload["columns"] = names_json(data);
    payload["pearson_residuals"] = rhglm::detail::vector_json(resid);
    emit_json(a.common, rhglm::with_provenance(payload, a.common.seed, config));
  }
  if (!fit.converged) {
    std::cerr << "rhglm: estimator did not converge (" << fit.status << ")\n";
    return kExitNoConvergence;
  }
  return 0;
}

int cmd_bayes(const BayesArgs& a) {
  Json config = data_config(a.data);
  config["command"] = "bayes";
  config["model"] = a.model;
  config["c"] = a.c;
  config["prior_alpha"] = a.prior_alpha;
  config["prior_theta"] = a.prior_theta;
  config["iterations"] = a.iterations;
  config["burn_in"] = a.burn_in;
  config["step_size"] = a.step_size;
  config["leapfrog"] = a.leapfrog;
  config["adapt"] = a.adapt;
  config["hpd"] = a.hpd;

  rhglm::Model model;
  if (a.model == "gamma") {
    model = rhglm::Model::Gamma;
  } else if (a.model == "robust") {
    model = rhglm::Model::Robust;
  } else {
    throw rhglm::DomainError("bayes supports --model gamma or robust");
  }
  const rhglm::Dataset data = load(a.data, false);
  if (data.n() < data.p()) {
    return fail("improper_posterior",
                "posterior is improper with a flat prior on beta when n < p (n = " + std::to_string(data.n()) +
                    ", p = " + std::to_string(data.p()) + ")");
  }
  data.validate();

  rhglm::Prior prior{a.prior_alpha, a.prior_theta};
  rhglm::HmcConfig hmc;
  hmc.step_size = a.step_size;
  hmc.leapfrog_steps = a.leapfrog;
  hmc.iterations = a.iterations;
  hmc.burn_in_fraction = a.burn_in;
  hmc.seed = a.common.seed;
  hmc.adapt_iterations = a.adapt;
  const rhglm::Chain chain = rhglm::hmc_sample(data, prior, model, a.c, hmc);
  const auto summary = rhglm::summarize(chain, a.hpd);

  Json warnings = Json::array();
  if (chain.accept_rate < 0.2 || chain.accept_rate > 0.95) {
    std::ostringstream msg;
    msg << "acceptance rate " << chain.accept_rate << " outside [0.2, 0.95]; adjust --step-size or --leapfrog";
    warnings.push_back(msg.str());
    std::cerr << "rhglm: warning: " << msg.str() << '\n';
  }

  if (!a.chain_csv.empty()) {
    OutputSink sink(a.chain_csv);
    std::vector<std::string> names = data.column_names;
    rhglm::write_chain_csv(sink.stream(), chain, names);
  }

  if (a.common.format == "csv") {
    OutputSink sink(a.common.output);
    auto& os = sink.stream();
    emit_csv_header(os, a.common.seed, config);
    os << "parameter,mean,sd,hpd_lower,hpd_upper\n";
    for (std::size_t j = 0; j < summary.size(); ++j) {
      const auto& s = summary[j];
      const std::string name = j < data.column_names.size() ? data.column_names[j] : s.name;
      os << name << ',' << rhglm::format_number(s.mean) << ',' << rhglm::format_number(s.sd) << ','
         << rhglm::format_number(s.hpd_lower) << ',' << rhglm::format_number(s.hpd_upper) << '\n';
    }
    return 0;
  }
  Json params = Json::array();
  for (std::size_t j = 0; j < summary.size(); ++j) {
    Json s = rhglm::to_json(summary[j]);
    if (j < data.column_names.size()) s["column"] = data.column_names[j];
    params.push_back(s);
  }
  Json payload;
  payload["model"] = a.model;
  payload["parameters"] = params;
  payload["accept_rate"] = chain.accept_rate;
  payload["divergences"] = chain.divergences;
  payload["kept_draws"] = chain.size();
  payload["mass_diag"] = rhglm::detail::vector_json(chain.mass_diag);
  payload["warnings"] = warnings;
  if (model == rhglm::Model::Robust) {
    const auto res = rhglm::bayesian_pearson(data, chain);
    payload["pearson_residuals"] = rhglm::detail::vector_json(res.residual_means);
    payload["fitted_values"] = rhglm::detail::vector_json(res.mu_means);
  }
  emit_json(a.common, rhglm::with_provenance(payload, a.common.seed, config));
  return 0;
}

int cmd_simulate(const SimulateArgs& a) {
  Json config{{"command", "simulate"}, {"replicates", a.replicates}, {"threads", a.threads}};
  if (a.sweep) {
    std::vector<double> grid = a.y_grid;
    if (grid.empty())
      for (int k = 0; k <= 18; ++k) grid.push_back(6.0 + 0.5 * k);
    if (a.c.size() != 1) throw rhglm::DomainError("--sweep takes a single --c value");
    config["sweep"] = true;
    config["c"] = a.c.front();
    config["cantoni_c"] = a.cantoni_c;
    config["n"] = a.sweep_n;
    config["y_grid"] = grid;
    const auto rows = rhglm::moving_outlier_sweep(a.c.front(), grid, {a.sweep_n, a.common.seed, a.cantoni_c});
    OutputSink sink(a.common.output);
    auto& os = sink.stream();
    if (a.common.format == "json") {
      Json table = Json::array();
      for (const auto& r : rows) {
        table.push_back(Json{{"y_n", r.y_n},
                             {"estimator", r.estimator},
                             {"beta1", rhglm::detail::number_json(r.beta1)},
                             {"beta2", rhglm::detail::number_json(r.beta2)},
                             {"nu", rhglm::detail::number_json(r.nu)},
                             {"converged", r.converged}});
      }
      os << rhglm::with_provenance(Json{{"sweep", table}}, a.common.seed, config).dump(2) << '\n';
    } else {
      emit_csv_header(os, a.common.seed, config);
      rhglm::write_sweep_csv(os, rows);
    }
    return 0;
  }

  std::vector<rhglm::ScenarioSpec> specs;
  std::vector<std::string> names;
  if (a.scenario == "all") {
    names = {"S1", "S2", "S3", "S4"};
  } else {
    names = {a.scenario};
  }
  for (const auto& name : names) {
    for (int n : a.n) {
      auto spec = rhglm::ScenarioSpec::standard(rhglm::scenario_from_string(name), n);
      spec.replicates = a.replicates;
      spec.seed = a.common.seed;
      spec.c_grid = a.c;
      spec.cantoni_c = a.cantoni_c;
      spec.include_cantoni = !a.no_cantoni;
      spec.shift_after_leverage = a.shift_after_leverage;
      spec.threads = a.threads;
      specs.push_back(spec);
    }
  }
  const auto reports = rhglm::run_scenarios(specs);
  config["scenario"] = a.scenario;
  config["n"] = a.n;
  config["c_grid"] = a.c;
  config["cantoni_c"] = a.cantoni_c;
  config["include_cantoni"] = !a.no_cantoni;
  config["shift_after_leverage"] = a.shift_after_leverage;

  OutputSink sink(a.common.output);
  auto& os = sink.stream();
  bool invalid = false;
  for (const auto& r : reports)
    for (const auto& c : r.cells) invalid = invalid || !c.valid;
  if (a.common.format == "json") {
    Json arr = Json::array();
    for (const auto& r : reports) arr.push_back(rhglm::to_json(r));
    os << rhglm::with_provenance(Json{{"reports", arr}}, a.common.seed, config).dump(2) << '\n';
  } else {
    emit_csv_header(os, a.common.seed, config);
    rhglm::PremiumProtectionReport all;
    for (const auto& r : reports) all.cells.insert(all.cells.end(), r.cells.begin(), r.cells.end());
    rhglm::write_report_csv(os, all);
  }
  if (invalid) std::cerr << "rhglm: warning: some cells exceed the 2% fit-failure cap (valid=false)\n";
  return 0;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--output,-o", c.output, "Output file (default stdout)");
  cmd->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--seed", c.seed, "Random seed (recorded in the output)");
}

void add_data(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.data, "Input CSV with a header row")->required();
  cmd->add_option("--response", d.response, "Name of the response column")->required();
  cmd->add_flag("--no-intercept", d.no_intercept, "Do not add an intercept column");
  cmd->add_option("--exclude", d.exclude, "Columns to leave out of the design");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust gamma GLM with log-Pareto tails"};
  app.set_version_flag("--version", std::string(rhglm::kVersion));
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Maximum likelihood or M-estimation");
  add_common(fit_cmd, fit.common);
  add_data(fit_cmd, fit.data);
  fit_cmd->add_option("--model", fit.model, "Estimator")->check(CLI::IsMember({"gamma", "robust", "cantoni"}));
  fit_cmd->add_option("--c", fit.c, "Tuning constant")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--cantoni-nu", fit.cantoni_nu, "'estimate' or a fixed shape for --model cantoni");

  BayesArgs bayes;
  auto* bayes_cmd = app.add_subcommand("bayes", "Posterior sampling by Hamiltonian Monte Carlo");
  add_common(bayes_cmd, bayes.common);
  add_data(bayes_cmd, bayes.data);
  bayes_cmd->add_option("--model", bayes.model, "Likelihood")->check(CLI::IsMember({"gamma", "robust"}));
  bayes_cmd->add_option("--c", bayes.c, "Tuning constant")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--prior-alpha", bayes.prior_alpha, "Gamma prior shape for nu")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--prior-theta", bayes.prior_theta, "Gamma prior scale for nu")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--iterations", bayes.iterations, "HMC iterations")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--burn-in", bayes.burn_in, "Fraction of iterations discarded")->check(CLI::Range(0.0, 0.999));
  bayes_cmd->add_option("--step-size", bayes.step_size, "Leapfrog step size")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--leapfrog", bayes.leapfrog, "Leapfrog steps per iteration")->check(CLI::PositiveNumber);
  bayes_cmd->add_option("--adapt", bayes.adapt, "Pilot iterations for the mass matrix (0: unit mass)");
  bayes_cmd->add_option("--hpd", bayes.hpd, "HPD interval probability")->check(CLI::Range(0.5, 0.999));
  bayes_cmd->add_option("--chain-csv", bayes.chain_csv, "Write kept draws to this CSV file");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Premium/protection study or moving-outlier sweep");
  add_common(sim_cmd, sim.common);
  sim_cmd->add_option("--scenario", sim.scenario, "S0..S4 or 'all' (S1..S4)");
  sim_cmd->add_option("--n", sim.n, "Sample size(s)");
  sim_cmd->add_option("--replicates", sim.replicates, "Replicates per scenario");
  sim_cmd->add_option("--c", sim.c, "Tuning constant(s) for the robust model")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--cantoni-c", sim.cantoni_c, "Clipping constant of the M-estimator")->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--no-cantoni", sim.no_cantoni, "Leave the M-estimator out");
  sim_cmd->add_flag("--shift-after-leverage", sim.shift_after_leverage,
                    "S3/S4: shift around the mean at the new covariate value");
  sim_cmd->add_option("--threads", sim.threads, "Worker threads")->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--sweep", sim.sweep, "Moving-outlier sweep instead of the scenario study");
  sim_cmd->add_option("--y-grid", sim.y_grid, "Sweep values of the last response (default 6, 6.5, ..., 15)");
  sim_cmd->add_option("--sweep-n", sim.sweep_n, "Sweep sample size")->check(CLI::Range(3, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what());
  }
  if (sim.sweep && sim_cmd->count("--c") == 0) sim.c = {1.6};

  try {
    if (*fit_cmd) return cmd_fit(fit);
    if (*bayes_cmd) return cmd_bayes(bayes);
    if (*sim_cmd) return cmd_simulate(sim);
  } catch (const rhglm::DataError& e) {
    return fail("data_error", e.what());
  } catch (const rhglm::DomainError& e) {
    return fail("invalid_argument", e.what());
  } catch (const rhglm::OverflowError& e) {
    return fail("overflow", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("json_error", e.what());
  }
  return 0;
}
