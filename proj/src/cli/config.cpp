#include <fstream>
#include <set>

#include <json.hpp>

#include "balpol/cli.hpp"
#include "balpol/dataset.hpp"

namespace balpol::cli {

using nlohmann::json;

namespace {

[[noreturn]] void unknown_key(const std::string& key) {
  throw UsageError("unknown config key: " + key);
}

void check_keys(const json& obj, const std::string& prefix,
                const std::set<std::string>& allowed) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) unknown_key(prefix.empty() ? key : prefix + "." + key);
}

std::vector<double> number_list(const json& v, const std::string& key) {
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
    return out;
  }
  if (!v.is_array()) throw UsageError("config key " + key + " must be a number or list");
  for (const auto& e : v) out.push_back(e.get<double>());
  return out;
}

}  // namespace

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config parse error in " + path + ": " + e.what());
  }
  check_keys(j, "", {"kernel", "balance", "propensity", "outcome", "crossfit", "tune",
                     "learner", "seed", "output"});
  if (j.contains("kernel")) {
    const auto& k = j["kernel"];
    check_keys(k, "kernel", {"bandwidth", "scale"});
    if (k.contains("bandwidth")) kernel_bandwidth = k["bandwidth"].get<double>();
    if (k.contains("scale")) kernel_scale = k["scale"].get<std::string>();
  }
  if (j.contains("balance")) {
    const auto& b = j["balance"];
    check_keys(b, "balance", {"gamma", "lambda", "tol", "max_iters"});
    if (b.contains("gamma")) balance_gamma = number_list(b["gamma"], "balance.gamma");
    if (b.contains("lambda")) balance_lambda = b["lambda"].get<double>();
    if (b.contains("tol")) balance_tol = b["tol"].get<double>();
    if (b.contains("max_iters")) balance_max_iters = b["max_iters"].get<int>();
  }
  if (j.contains("propensity")) {
    const auto& p = j["propensity"];
    check_keys(p, "propensity", {"kind", "known"});
    if (p.contains("kind")) propensity_kind = p["kind"].get<std::string>();
    if (p.contains("known")) propensity_known_path = p["known"].get<std::string>();
  }
  if (j.contains("outcome")) {
    const auto& o = j["outcome"];
    check_keys(o, "outcome", {"ridge"});
    if (o.contains("ridge")) outcome_ridge = o["ridge"].get<double>();
  }
  if (j.contains("crossfit")) {
    const auto& c = j["crossfit"];
    check_keys(c, "crossfit", {"folds"});
    if (c.contains("folds")) crossfit_folds = c["folds"].get<int>();
  }
  if (j.contains("tune")) {
    const auto& t = j["tune"];
    check_keys(t, "tune", {"grid"});
    if (t.contains("grid")) {
      const auto& g = t["grid"];
      check_keys(g, "tune.grid", {"s", "gamma", "noise"});
      if (g.contains("s")) tune_grid.bandwidths = number_list(g["s"], "tune.grid.s");
      if (g.contains("gamma")) tune_grid.gammas = number_list(g["gamma"], "tune.grid.gamma");
      if (g.contains("noise")) tune_grid.noises = number_list(g["noise"], "tune.grid.noise");
    }
  }
  if (j.contains("learner")) {
    const auto& l = j["learner"];
    check_keys(l, "learner",
               {"lambda", "restarts", "grad_tol", "max_iters", "init_scale"});
    if (l.contains("lambda")) learner_lambda = l["lambda"].get<double>();
    if (l.contains("restarts")) learner_restarts = l["restarts"].get<int>();
    if (l.contains("grad_tol")) learner_grad_tol = l["grad_tol"].get<double>();
    if (l.contains("max_iters")) learner_max_iters = l["max_iters"].get<int>();
    if (l.contains("init_scale")) learner_init_scale = l["init_scale"].get<double>();
  }
  if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
  if (j.contains("output")) output = j["output"].get<std::string>();
}

RunConfig RunConfig::load(const std::string& path) {
  RunConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

KernelSpec RunConfig::kernel_spec() const {
  KernelSpec spec;
  spec.bandwidth = kernel_bandwidth;
  if (kernel_scale != "sample") {
    try {
      spec.scale = load_matrix_csv(kernel_scale);
    } catch (const std::exception& e) {
      throw DataError(std::string("kernel.scale: ") + e.what());
    }
  }
  return spec;
}

BalanceConfig RunConfig::balance_config() const {
  BalanceConfig cfg;
  cfg.gamma = balance_gamma;
  cfg.lambda_scalar = balance_lambda;
  cfg.kernels = {kernel_spec()};
  return cfg;
}

}  // namespace balpol::cli
