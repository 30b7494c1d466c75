#include <CLI11.hpp>

#include "balpol/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"balpol: balanced off-policy evaluation and policy learning"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, balpol::cli::CommonArgs& common) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->add_option("--seed", common.seed, "master RNG seed");
    sub->add_option("--output", common.output, "output path (stdout if absent)");
    sub->add_flag("--maximize", common.maximize,
                  "treat outcomes as rewards (negate on load)");
  };

  balpol::cli::EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "off-policy evaluation");
  add_common(evaluate, ev.common);
  evaluate->add_option("--data", ev.data_path, "dataset CSV")->required();
  evaluate->add_option("--policy", ev.policy_spec,
                       "uniform | deterministic:<arm> | beta JSON | assignment CSV")
      ->required();
  evaluate->add_option("--method", ev.method,
                       "balanced|balanced-dr|ipw|nipw|cipw|ncipw|dr|direct");
  evaluate->add_option("--clip", ev.clip, "clip level for cipw/ncipw");
  evaluate->add_option("--propensity", ev.propensity, "logit|gaussian|known:<csv>");
  evaluate->add_option("--outcome-model", ev.outcome_model, "kernel-ridge|none");
  evaluate->add_flag("--no-crossfit", ev.no_crossfit, "fit the outcome model in-sample");

  balpol::cli::LearnArgs ln;
  CLI::App* learn = app.add_subcommand("learn", "policy learning");
  add_common(learn, ln.common);
  learn->add_option("--data", ln.data_path, "dataset CSV")->required();
  learn->add_option("--method", ln.method, "balanced|balanced-dr|ipw-logit|dr-logit");
  learn->add_option("--restarts", ln.restarts, "BFGS restarts");
  learn->add_option("--lambda", ln.lambda, "imbalance regularizer weight");
  learn->add_option("--max-iters", ln.max_iters, "BFGS iteration cap");
  learn->add_option("--propensity", ln.propensity, "logit|gaussian|known:<csv>");
  learn->add_option("--trace", ln.trace_path, "iteration trace CSV path");
  learn->add_option("--eval-against", ln.eval_against,
                    "environment JSON; appends Monte Carlo regret");
  learn->add_option("--regions-out", ln.regions_out, "argmax policy regions CSV");
  learn->add_option("--regions-grid", ln.regions_grid, "regions grid resolution");

  balpol::cli::SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "generate synthetic datasets");
  add_common(simulate, sim.common);
  simulate->add_option("--example", sim.example, "environment id (1)");
  simulate->add_option("--n", sim.n, "sample size");
  simulate->add_option("--sigma", sim.sigma, "outcome noise sd");
  simulate->add_option("--env-out", sim.env_out, "write environment JSON");

  balpol::cli::BenchmarkArgs bm;
  CLI::App* benchmark = app.add_subcommand("benchmark", "replication harnesses");
  add_common(benchmark, bm.common);
  benchmark->add_option("--mode", bm.mode, "evaluation|learning|rate");
  benchmark->add_option("--reps", bm.reps, "replications (evaluation/rate)");
  benchmark->add_option("--draws", bm.draws, "dataset draws (learning)");
  benchmark->add_option("--grid", bm.grid, "sample sizes (rate)")->delimiter(',');
  benchmark->add_option("--restarts", bm.restarts, "learner restarts (learning)");
  benchmark->add_option("--csv", bm.csv_path, "also write a CSV table");

  balpol::cli::TuneArgs tn;
  CLI::App* tune = app.add_subcommand("tune", "marginal-likelihood hyperparameter grid");
  add_common(tune, tn.common);
  tune->add_option("--data", tn.data_path, "dataset CSV")->required();
  tune->add_option("--grid-s", tn.grid_s, "bandwidth grid")->delimiter(',');
  tune->add_option("--grid-gamma", tn.grid_gamma, "gamma grid")->delimiter(',');
  tune->add_option("--grid-noise", tn.grid_noise, "noise variance grid")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  return balpol::cli::run_guarded([&]() -> int {
    if (evaluate->parsed()) return balpol::cli::cmd_evaluate(ev);
    if (learn->parsed()) return balpol::cli::cmd_learn(ln);
    if (simulate->parsed()) return balpol::cli::cmd_simulate(sim);
    if (benchmark->parsed()) return balpol::cli::cmd_benchmark(bm);
    if (tune->parsed()) return balpol::cli::cmd_tune(tn);
    return 1;
  });
}
