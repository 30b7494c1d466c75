#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>

#include <json.hpp>

#include "balpol/cli.hpp"
#include "balpol/estimators.hpp"
#include "balpol/learner.hpp"
#include "balpol/rng.hpp"
#include "balpol/simulation.hpp"

namespace balpol::cli {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

std::uint64_t resolve_seed(const CommonArgs& common, const RunConfig& cfg) {
  if (common.seed) return *common.seed;
  if (cfg.seed) return *cfg.seed;
  std::random_device rd;
  const std::uint64_t s =
      (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
  std::cerr << "seed: " << s << "\n";
  return s;
}

RunConfig config_of(const CommonArgs& common) {
  RunConfig cfg;
  if (!common.config_path.empty()) cfg.apply_file(common.config_path);
  return cfg;
}

LoggedDataset load_data(const std::string& path, bool maximize) {
  LoggedDataset ds;
  try {
    ds = load_dataset_csv(path, maximize);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const ValidationResult vr = validate_dataset(ds);
  if (!vr.ok) {
    std::string msg = "dataset validation failed:";
    for (const auto& v : vr.violations) msg += "\n  " + v;
    throw DataError(msg);
  }
  return ds;
}

// policy spec: "uniform", "deterministic:<arm>", logit-beta JSON file, or
// an explicit assignment CSV
PolicyAssignment parse_policy(const std::string& spec, const LoggedDataset& ds) {
  if (spec == "uniform") return assignment_of(UniformPolicy(ds.m), ds.X);
  if (spec.rfind("deterministic:", 0) == 0) {
    const int arm = std::stoi(spec.substr(14));
    if (arm < 1 || arm > ds.m)
      throw UsageError("deterministic policy arm out of range: " + std::to_string(arm));
    return assignment_of(DeterministicPolicy(arm - 1, ds.m), ds.X);
  }
  if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") {
    std::ifstream in(spec);
    if (!in) throw DataError("cannot open policy file: " + spec);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw DataError("policy parse error: " + std::string(e.what()));
    }
    if (!j.contains("beta")) throw DataError("policy JSON needs a beta matrix");
    const auto& rows = j["beta"];
    la::Mat beta(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t k = 0; k < rows[t].size(); ++k) beta(t, k) = rows[t][k].get<double>();
    if (beta.rows() != static_cast<std::size_t>(ds.m) || beta.cols() != ds.dim() + 1)
      throw DataError("policy beta must be m x (d+1)");
    return assignment_of(LogitPolicy(std::move(beta)), ds.X);
  }
  if (spec.size() > 4 && spec.substr(spec.size() - 4) == ".csv") {
    la::Mat P;
    try {
      P = load_matrix_csv(spec);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
    if (P.rows() != ds.n() || P.cols() != static_cast<std::size_t>(ds.m))
      throw DataError("assignment CSV must be n x m");
    for (std::size_t i = 0; i < P.rows(); ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < P.cols(); ++t) {
        if (P(i, t) < 0.0 || P(i, t) > 1.0)
          throw DataError("assignment entry outside [0,1] at row " + std::to_string(i));
        s += P(i, t);
      }
      if (std::fabs(s - 1.0) > 1e-9)
        throw DataError("assignment row " + std::to_string(i) + " does not sum to 1");
    }
    return PolicyAssignment{std::move(P)};
  }
  throw UsageError("unrecognized policy spec: " + spec);
}

la::Mat propensity_matrix(const std::string& flag, const RunConfig& cfg,
                          const LoggedDataset& ds) {
  std::string kind = cfg.propensity_kind;
  std::string known_path = cfg.propensity_known_path;
  if (!flag.empty()) {
    if (flag.rfind("known:", 0) == 0) {
      kind = "known";
      known_path = flag.substr(6);
    } else {
      kind = flag;
    }
  }
  try {
    if (kind == "logit")
      return fit_multinomial_logit(ds.X, ds.T, ds.m).predict_all(ds.X);
    if (kind == "gaussian")
      return fit_gaussian_discriminant(ds.X, ds.T, ds.m).predict_all(ds.X);
    if (kind == "known") {
      if (known_path.empty()) throw UsageError("known propensities need a CSV path");
      la::Mat phi = load_matrix_csv(known_path);
      if (phi.rows() != ds.n() || phi.cols() != static_cast<std::size_t>(ds.m))
        throw DataError("propensity CSV must be n x m");
      return phi;
    }
  } catch (const UsageError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw NumericalError(e.what());
  }
  throw UsageError("unknown propensity kind: " + kind);
}

la::Mat outcome_matrix(const EvaluateArgs& args, const RunConfig& cfg,
                       const LoggedDataset& ds, std::uint64_t seed, json& diag) {
  if (args.outcome_model == "none")
    throw UsageError("method " + args.method + " needs --outcome-model kernel-ridge");
  if (args.outcome_model != "kernel-ridge")
    throw UsageError("unknown outcome model: " + args.outcome_model);
  try {
    if (args.no_crossfit)
      return fit_kernel_ridge_per_arm(ds, cfg.kernel_spec(), cfg.outcome_ridge)
          .predict_all(ds.X);
    const CrossfitResult cf = crossfit(ds, cfg.kernel_spec(), cfg.outcome_ridge,
                                       cfg.crossfit_folds, Rng::derive(seed, 0xcf));
    if (cf.fallback_used) diag["crossfit_fallback_folds"] = cf.fallback_folds;
    return cf.mu_hat;
  } catch (const std::exception& e) {
    throw NumericalError(e.what());
  }
}

void write_output(const json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text;
}

json solution_diagnostics(const WeightsSolution& sol) {
  json d;
  d["objective"] = sol.objective;
  d["imbalance_per_arm"] = sol.imbalance_per_arm;
  d["variance_term"] = sol.variance_term;
  d["kkt_residual"] = sol.kkt_residual;
  d["iterations"] = sol.iterations;
  int active = 0;
  for (bool a : sol.active_set) active += a;
  d["active_set_size"] = active;
  return d;
}

json beta_to_json(const la::Mat& beta) {
  json rows = json::array();
  for (std::size_t t = 0; t < beta.rows(); ++t) {
    json row = json::array();
    for (std::size_t k = 0; k < beta.cols(); ++k) row.push_back(beta(t, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

TrueEnvironment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open environment file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("environment parse error: " + std::string(e.what()));
  }
  if (j.value("example", 0) != 1)
    throw DataError("environment file must describe example 1");
  Example1Spec spec;
  spec.m = j.value("m", 5);
  spec.sigma = j.value("sigma", 1.0);
  return example1_env(spec);
}

}  // namespace

int cmd_evaluate(const EvaluateArgs& args) {
  const RunConfig cfg = config_of(args.common);
  const std::uint64_t seed = resolve_seed(args.common, cfg);
  const LoggedDataset ds = load_data(args.data_path, args.common.maximize);
  const PolicyAssignment P = parse_policy(args.policy_spec, ds);

  json out;
  out["schema_version"] = kSchemaVersion;
  out["method"] = args.method;
  out["n"] = ds.n();
  out["m"] = ds.m;
  out["seed"] = seed;
  json diag;

  const std::string& method = args.method;
  const bool needs_mu =
      method == "balanced-dr" || method == "dr" || method == "direct";
  la::Mat mu_hat;
  if (needs_mu) mu_hat = outcome_matrix(args, cfg, ds, seed, diag);

  try {
    if (method == "balanced" || method == "balanced-dr") {
      BalanceConfig bcfg = cfg.balance_config();
      BalancedEvalOptions opts;
      opts.solve.tol = cfg.balance_tol;
      opts.solve.max_iters = cfg.balance_max_iters;
      const EvaluationReport rep = evaluate_balanced(
          ds, P, bcfg, method == "balanced-dr" ? &mu_hat : nullptr, opts);
      out["estimate"] = rep.estimate;
      out["support"] = rep.weights_support;
      out["dr_used"] = rep.dr_used;
      diag.update(solution_diagnostics(*rep.solution));
    } else if (method == "ipw" || method == "nipw" || method == "cipw" ||
               method == "ncipw" || method == "dr") {
      const la::Mat phi = propensity_matrix(args.propensity, cfg, ds);
      la::Vec W;
      try {
        if (method == "ipw" || method == "dr") W = weights_ipw(P, ds.T, phi);
        else if (method == "nipw") W = weights_nipw(P, ds.T, phi);
        else if (method == "cipw") W = weights_cipw(P, ds.T, phi, args.clip);
        else W = weights_ncipw(P, ds.T, phi, args.clip);
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      }
      out["estimate"] = method == "dr" ? tau_dr(W, P, mu_hat, ds) : tau_weighted(W, ds.Y);
      out["support"] = support_count(W);
      out["dr_used"] = method == "dr";
    } else if (method == "direct") {
      out["estimate"] = tau_direct(P, mu_hat);
      out["dr_used"] = false;
    } else {
      throw UsageError("unknown method: " + method);
    }
  } catch (const SolverError& e) {
    throw NumericalError(e.what());
  }

  out["diagnostics"] = diag;
  write_output(out, !args.common.output.empty() ? args.common.output : cfg.output);
  return 0;
}

int cmd_learn(const LearnArgs& args) {
  RunConfig cfg = config_of(args.common);
  const std::uint64_t seed = resolve_seed(args.common, cfg);
  const LoggedDataset ds = load_data(args.data_path, args.common.maximize);

  LearnerConfig lcfg;
  lcfg.lambda_reg = args.lambda.value_or(cfg.learner_lambda);
  lcfg.restarts = args.restarts.value_or(cfg.learner_restarts);
  lcfg.grad_tol = cfg.learner_grad_tol;
  lcfg.max_iters = args.max_iters.value_or(cfg.learner_max_iters);
  lcfg.init_scale = cfg.learner_init_scale;
  lcfg.seed = seed;
  if (lcfg.restarts < 1) throw UsageError("--restarts must be >= 1");

  LearnResult lr;
  try {
    if (args.method == "balanced") {
      lr = learn_balanced(ds, cfg.balance_config(), lcfg);
    } else if (args.method == "balanced-dr") {
      const CrossfitResult cf = crossfit(ds, cfg.kernel_spec(), cfg.outcome_ridge,
                                         cfg.crossfit_folds, Rng::derive(seed, 0xcf));
      lr = learn_balanced_dr(ds, cfg.balance_config(), lcfg, cf.mu_hat);
    } else if (args.method == "ipw-logit") {
      lr = learn_ipw_logit(ds, propensity_matrix(args.propensity, cfg, ds), lcfg);
    } else if (args.method == "dr-logit") {
      const CrossfitResult cf = crossfit(ds, cfg.kernel_spec(), cfg.outcome_ridge,
                                         cfg.crossfit_folds, Rng::derive(seed, 0xcf));
      lr = learn_dr_logit(ds, propensity_matrix(args.propensity, cfg, ds), cf.mu_hat, lcfg);
    } else {
      throw UsageError("unknown method: " + args.method);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw NumericalError(e.what());
  }

  json out;
  out["schema_version"] = kSchemaVersion;
  out["method"] = args.method;
  out["seed"] = seed;
  out["beta"] = beta_to_json(lr.beta);
  out["objective"] = lr.objective;
  out["best_restart"] = lr.best_restart;
  out["restarts"] = lcfg.restarts;

  if (!args.trace_path.empty()) {
    std::ofstream tr(args.trace_path);
    if (!tr) throw DataError("cannot open for writing: " + args.trace_path);
    tr << "restart,iter,objective,grad_norm,active_set_size\n";
    char buf[64];
    for (const auto& rec : lr.trace) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", rec.objective, rec.grad_norm);
      tr << rec.restart << "," << rec.iter << "," << buf << "," << rec.active_size << "\n";
    }
  }

  if (!args.eval_against.empty()) {
    const TrueEnvironment env = load_environment(args.eval_against);
    if (env.m != ds.m) throw DataError("environment arm count does not match dataset");
    out["regret"] =
        regret(LogitPolicy(lr.beta), env, 100000, Rng::derive(seed, 0x7265));
  }

  if (!args.regions_out.empty()) {
    std::ofstream rg(args.regions_out);
    if (!rg) throw DataError("cannot open for writing: " + args.regions_out);
    rg << "x1,x2,arm\n";
    const LogitPolicy pol(lr.beta);
    la::Vec pi(ds.m);
    const int G = args.regions_grid;
    char buf[64];
    for (int a = 0; a < G; ++a)
      for (int b = 0; b < G; ++b) {
        const double x1 = -2.0 + 4.0 * a / (G - 1);
        const double x2 = -2.0 + 4.0 * b / (G - 1);
        const double xy[2] = {x1, x2};
        pol.probabilities(xy, 2, pi.data());
        const int arm =
            static_cast<int>(std::max_element(pi.begin(), pi.end()) - pi.begin());
        std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%d", x1, x2, arm + 1);
        rg << buf << "\n";
      }
  }

  write_output(out, !args.common.output.empty() ? args.common.output : cfg.output);
  return 0;
}

int cmd_simulate(const SimulateArgs& args) {
  if (args.example != 1) throw UsageError("only --example 1 is available");
  const RunConfig cfg = config_of(args.common);
  const std::uint64_t seed = resolve_seed(args.common, cfg);
  Example1Spec spec;
  spec.n = args.n;
  spec.sigma = args.sigma;
  spec.seed = seed;
  const SimDraw draw = gen_example1(spec);
  const std::string out_path =
      !args.common.output.empty() ? args.common.output : cfg.output;
  if (out_path.empty()) throw UsageError("simulate needs --output <csv>");
  write_dataset_csv(out_path, draw.ds);
  if (!args.env_out.empty()) {
    json env;
    env["schema_version"] = kSchemaVersion;
    env["example"] = 1;
    env["m"] = spec.m;
    env["sigma"] = spec.sigma;
    write_output(env, args.env_out);
  }
  return 0;
}

int cmd_benchmark(const BenchmarkArgs& args) {
  const RunConfig cfg = config_of(args.common);
  const std::uint64_t seed = resolve_seed(args.common, cfg);
  json out;
  out["schema_version"] = kSchemaVersion;
  out["mode"] = args.mode;
  out["seed"] = seed;

  std::string csv;
  try {
    if (args.mode == "evaluation") {
      Example1Spec spec;
      EvalBenchmarkOptions opts;
      opts.reps = args.reps;
      opts.outcome_ridge = cfg.outcome_ridge;
      opts.crossfit_folds = cfg.crossfit_folds;
      const ReplicationReport rep = run_evaluation_benchmark(spec, opts, seed);
      out["reps"] = rep.reps;
      out["target_sape"] = rep.target_sape;
      out["failed_reps"] = rep.failed_reps;
      json rows = json::array();
      csv = "weights,estimator,rmse,bias,sd,support_mean,support_sd\n";
      char buf[256];
      for (const auto& r : rep.rows) {
        json jr;
        jr["weights"] = r.weights;
        jr["estimator"] = r.estimator;
        jr["rmse"] = r.rmse;
        jr["bias"] = r.bias;
        jr["sd"] = r.sd;
        jr["support_mean"] = r.support_mean;
        jr["support_sd"] = r.support_sd;
        rows.push_back(std::move(jr));
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                      r.weights.c_str(), r.estimator.c_str(), r.rmse, r.bias, r.sd,
                      r.support_mean, r.support_sd);
        csv += buf;
      }
      out["rows"] = std::move(rows);
    } else if (args.mode == "learning") {
      Example1Spec spec;
      spec.sigma = 0.0;
      LearnBenchmarkOptions opts;
      opts.draws = args.draws;
      opts.restarts = args.restarts;
      opts.outcome_ridge = cfg.outcome_ridge;
      opts.crossfit_folds = cfg.crossfit_folds;
      const LearningReport rep = run_learning_benchmark(spec, opts, seed);
      out["draws"] = rep.draws;
      json rows = json::array();
      csv = "method,mean_regret,sd_regret,completed\n";
      char buf[160];
      for (const auto& r : rep.rows) {
        json jr;
        jr["method"] = r.method;
        jr["mean_regret"] = r.mean_regret;
        jr["sd_regret"] = r.sd_regret;
        jr["regrets"] = r.regrets;
        rows.push_back(std::move(jr));
        std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%zu\n", r.method.c_str(),
                      r.mean_regret, r.sd_regret, r.regrets.size());
        csv += buf;
      }
      out["rows"] = std::move(rows);
    } else if (args.mode == "rate") {
      RateOptions opts;
      opts.n_grid = args.grid;
      opts.reps = args.reps;
      const RateReport rep = run_rate_experiment(opts, seed);
      out["n_grid"] = rep.n_grid;
      out["reps"] = rep.reps;
      out["rmse_balanced"] = rep.rmse_balanced;
      out["rmse_ipw_true"] = rep.rmse_ipw_true;
      out["slope_balanced"] = rep.slope_balanced;
      out["slope_ipw_true"] = rep.slope_ipw_true;
      csv = "n,rmse_balanced,rmse_ipw_true\n";
      char buf[128];
      for (std::size_t i = 0; i < rep.n_grid.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g\n", rep.n_grid[i],
                      rep.rmse_balanced[i], rep.rmse_ipw_true[i]);
        csv += buf;
      }
    } else {
      throw UsageError("unknown benchmark mode: " + args.mode);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const std::exception& e) {
    throw NumericalError(e.what());
  }

  if (!args.csv_path.empty()) {
    std::ofstream cf(args.csv_path);
    if (!cf) throw DataError("cannot open for writing: " + args.csv_path);
    cf << csv;
  }
  write_output(out, !args.common.output.empty() ? args.common.output : cfg.output);
  return 0;
}

int cmd_tune(const TuneArgs& args) {
  RunConfig cfg = config_of(args.common);
  const LoggedDataset ds = load_data(args.data_path, args.common.maximize);
  TuneGrid grid = cfg.tune_grid;
  if (!args.grid_s.empty()) grid.bandwidths = args.grid_s;
  if (!args.grid_gamma.empty()) grid.gammas = args.grid_gamma;
  if (!args.grid_noise.empty()) grid.noises = args.grid_noise;
  TuneResult res;
  try {
    res = tune_hyperparameters(ds, grid);
  } catch (const std::exception& e) {
    throw NumericalError(e.what());
  }
  json out;
  out["schema_version"] = kSchemaVersion;
  out["bandwidth"] = res.bandwidth;
  out["gamma"] = res.gamma;
  out["noise_var"] = res.noise_var;
  out["score"] = res.score;
  write_output(out, !args.common.output.empty() ? args.common.output : cfg.output);
  return 0;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace balpol::cli
