#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "balpol/balance.hpp"
#include "balpol/models.hpp"

namespace balpol::cli {

// exit code 1
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// exit code 2
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// exit code 3
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structured settings mirroring every config key the library modules
// expose. Unknown keys in the file are rejected by name.
struct RunConfig {
  double kernel_bandwidth = 1.0;
  std::string kernel_scale = "sample";  // "sample" or a matrix CSV path

  std::vector<double> balance_gamma{1.0};
  double balance_lambda = 1.0;
  double balance_tol = 1e-7;
  int balance_max_iters = 2000;

  std::string propensity_kind = "logit";  // logit | gaussian | known
  std::string propensity_known_path;

  double outcome_ridge = 0.1;
  int crossfit_folds = 5;

  TuneGrid tune_grid;

  double learner_lambda = 0.0;
  int learner_restarts = 10;
  double learner_grad_tol = 1e-6;
  int learner_max_iters = 200;
  double learner_init_scale = 1.0;

  std::optional<std::uint64_t> seed;
  std::string output;

  static RunConfig load(const std::string& path);
  void apply_file(const std::string& path);

  BalanceConfig balance_config() const;
  KernelSpec kernel_spec() const;
};

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool maximize = false;
};

struct EvaluateArgs {
  CommonArgs common;
  std::string data_path;
  std::string policy_spec;
  std::string method = "balanced";
  double clip = 0.05;
  std::string propensity;  // overrides config when non-empty; "known:<csv>"
  std::string outcome_model = "kernel-ridge";  // or "none"
  bool no_crossfit = false;
};

struct LearnArgs {
  CommonArgs common;
  std::string data_path;
  std::string method = "balanced";
  std::optional<int> restarts;
  std::optional<double> lambda;
  std::optional<int> max_iters;
  std::string propensity;
  std::string trace_path;
  std::string eval_against;  // environment JSON
  std::string regions_out;
  int regions_grid = 50;
};

struct SimulateArgs {
  CommonArgs common;
  int example = 1;
  int n = 100;
  double sigma = 1.0;
  std::string env_out;
};

struct BenchmarkArgs {
  CommonArgs common;
  std::string mode = "evaluation";  // evaluation | learning | rate
  int reps = 200;
  int draws = 20;
  std::vector<int> grid{50, 100, 200, 400};
  int restarts = 10;
  std::string csv_path;
};

struct TuneArgs {
  CommonArgs common;
  std::string data_path;
  std::vector<double> grid_s;
  std::vector<double> grid_gamma;
  std::vector<double> grid_noise;
};

int cmd_evaluate(const EvaluateArgs& args);
int cmd_learn(const LearnArgs& args);
int cmd_simulate(const SimulateArgs& args);
int cmd_benchmark(const BenchmarkArgs& args);
int cmd_tune(const TuneArgs& args);

// Maps the exception taxonomy to exit codes 0/1/2/3 and prints diagnostics.
int run_guarded(const std::function<int()>& body);

}  // namespace balpol::cli
