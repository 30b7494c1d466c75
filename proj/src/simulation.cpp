#include "balpol/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <thread>

#include "balpol/estimators.hpp"
#include "balpol/learner.hpp"
#include "balpol/models.hpp"
#include "balpol/rng.hpp"
#include "balpol/simd.hpp"

namespace balpol {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Example1Constants {
  la::Mat arm_centers;      // m x 2
  la::Mat outcome_centers;  // m x 2
};

Example1Constants example1_constants(int m) {
  Example1Constants c;
  c.arm_centers = la::Mat(m, 2);
  c.outcome_centers = la::Mat(m, 2);
  // arm 1 at the origin, arms 2..m on the unit circle
  for (int a = 1; a < m; ++a) {
    const double ang = kTwoPi * static_cast<double>(a - 1) / static_cast<double>(m - 1);
    c.arm_centers(a, 0) = std::cos(ang);
    c.arm_centers(a, 1) = std::sin(ang);
  }
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int a = 0; a < m; ++a) {
    const double ang = -kTwoPi * static_cast<double>(a + 1) / static_cast<double>(m);
    c.outcome_centers(a, 0) = std::cos(ang) * inv_sqrt2;
    c.outcome_centers(a, 1) = std::sin(ang) * inv_sqrt2;
  }
  return c;
}

double mu_of_distance(double r) {
  // exp(1 - 1/r), continuously extended by 0 at r = 0
  if (r <= 0.0) return 0.0;
  return std::exp(1.0 - 1.0 / r);
}

}  // namespace

TrueEnvironment example1_env(const Example1Spec& spec) {
  const int m = spec.m;
  auto consts = std::make_shared<const Example1Constants>(example1_constants(m));
  TrueEnvironment env;
  env.m = m;
  env.d = 2;
  env.noise_sd = spec.sigma;
  env.mu = [consts, m](const double* x, double* out) {
    for (int t = 0; t < m; ++t) {
      const double r = std::sqrt(simd::sqdist(x, consts->outcome_centers.row(t), 2));
      out[t] = mu_of_distance(r);
    }
  };
  env.phi = [consts, m](const double* x, double* out) {
    // Bayes posterior of the equal-prior Gaussian mixture
    double mx = -1e300;
    for (int t = 0; t < m; ++t) {
      out[t] = -0.5 * simd::sqdist(x, consts->arm_centers.row(t), 2);
      mx = std::max(mx, out[t]);
    }
    double s = 0.0;
    for (int t = 0; t < m; ++t) {
      out[t] = std::exp(out[t] - mx);
      s += out[t];
    }
    for (int t = 0; t < m; ++t) out[t] /= s;
  };
  env.sample_x = [consts, m](Rng& rng, double* x) {
    const int t = rng.uniform_int(m);
    x[0] = consts->arm_centers(t, 0) + rng.normal();
    x[1] = consts->arm_centers(t, 1) + rng.normal();
  };
  return env;
}

SimDraw gen_example1(const Example1Spec& spec) {
  SimDraw draw;
  draw.env = example1_env(spec);
  const int m = spec.m;
  const auto consts = example1_constants(m);
  Rng rng(spec.seed);
  draw.ds.m = m;
  draw.ds.X = la::Mat(spec.n, 2);
  draw.ds.T.resize(spec.n);
  draw.ds.Y.resize(spec.n);
  la::Vec mu(m);
  for (int i = 0; i < spec.n; ++i) {
    const int t = rng.uniform_int(m);
    draw.ds.T[i] = t;
    draw.ds.X(i, 0) = consts.arm_centers(t, 0) + rng.normal();
    draw.ds.X(i, 1) = consts.arm_centers(t, 1) + rng.normal();
    draw.env.mu(draw.ds.X.row(i), mu.data());
    draw.ds.Y[i] = mu[t] + spec.sigma * rng.normal();
  }
  return draw;
}

void ArgminMuPolicy::probabilities(const double* x, std::size_t, double* out) const {
  const int m = env_->m;
  la::Vec mu(m);
  env_->mu(x, mu.data());
  int best = 0;
  for (int t = 1; t < m; ++t)
    if (mu[t] < mu[best]) best = t;
  for (int t = 0; t < m; ++t) out[t] = (t == best) ? 1.0 : 0.0;
}

double sape(const PolicyAssignment& P, const la::Mat& mu_matrix) {
  if (P.n() != mu_matrix.rows() || P.P.cols() != mu_matrix.cols())
    throw std::invalid_argument("sape shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < P.n(); ++i)
    acc += simd::dot(P.P.row(i), mu_matrix.row(i), P.P.cols());
  return acc / static_cast<double>(P.n());
}

la::Mat true_mu_matrix(const TrueEnvironment& env, const la::Mat& X) {
  la::Mat mu(X.rows(), env.m);
  for (std::size_t i = 0; i < X.rows(); ++i) env.mu(X.row(i), mu.row(i));
  return mu;
}

PapeResult pape_estimate(const Policy& policy, const TrueEnvironment& env, int N,
                         std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("pape_estimate needs N >= 1");
  Rng rng(Rng::derive(seed, 0x70617065));
  la::Vec x(env.d), mu(env.m), pi(env.m);
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < N; ++i) {
    env.sample_x(rng, x.data());
    env.mu(x.data(), mu.data());
    policy.probabilities(x.data(), env.d, pi.data());
    const double v = simd::dot(pi.data(), mu.data(), env.m);
    acc += v;
    acc2 += v * v;
  }
  PapeResult r;
  r.value = acc / N;
  const double var = std::max(acc2 / N - r.value * r.value, 0.0);
  r.std_error = std::sqrt(var / N);
  return r;
}

double regret(const Policy& policy, const TrueEnvironment& env, int N,
              std::uint64_t seed) {
  const ArgminMuPolicy best(env);
  // common random numbers: both PAPEs see the same covariate stream
  return pape_estimate(policy, env, N, seed).value -
         pape_estimate(best, env, N, seed).value;
}

namespace {

struct Accum {
  double sum = 0.0, sumsq = 0.0;
  int count = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++count;
  }
  double mean() const { return count ? sum / count : 0.0; }
  double sd() const {
    if (!count) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(sumsq / count - m * m, 0.0));
  }
};

MethodStats stats_from(const std::string& weights, const std::string& estimator,
                       const std::vector<double>& estimates,
                       const std::vector<double>& supports, double target) {
  Accum est, sup;
  double se = 0.0;
  for (double e : estimates) {
    est.add(e);
    se += (e - target) * (e - target);
  }
  for (double s : supports) sup.add(s);
  MethodStats ms;
  ms.weights = weights;
  ms.estimator = estimator;
  ms.rmse = estimates.empty() ? 0.0 : std::sqrt(se / estimates.size());
  ms.bias = est.mean() - target;
  ms.sd = est.sd();
  ms.support_mean = sup.mean();
  ms.support_sd = sup.sd();
  return ms;
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  int hw = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  hw = std::max(1, std::min(hw, count));
  if (hw == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < hw; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

ReplicationReport run_evaluation_benchmark(const Example1Spec& spec,
                                           const EvalBenchmarkOptions& opts,
                                           std::uint64_t seed) {
  if (opts.reps < 2) throw std::invalid_argument("benchmark needs reps >= 2");
  Example1Spec fixed = spec;
  fixed.seed = seed;
  const SimDraw base = gen_example1(fixed);
  const la::Mat& X = base.ds.X;
  const std::size_t n = base.ds.n();
  const int m = spec.m;

  const la::Mat mu_true = true_mu_matrix(base.env, X);
  const ArgminMuPolicy pi_star(base.env);
  const PolicyAssignment P = assignment_of(pi_star, X);
  const double target = sape(P, mu_true);

  la::Mat phi_true(n, m);
  for (std::size_t i = 0; i < n; ++i) base.env.phi(X.row(i), phi_true.row(i));

  const std::vector<std::string> weight_names = {
      "ipw-true", "ipw-est",  "cipw-true",  "cipw-est", "nipw-true",
      "nipw-est", "ncipw-true", "ncipw-est", "balanced"};
  const int n_methods = static_cast<int>(weight_names.size());

  struct RepResult {
    std::vector<double> vanilla, dr, support;
    bool ok = false;
  };
  std::vector<RepResult> results(opts.reps);

  parallel_for(opts.reps, opts.threads, [&](int rep) {
    RepResult rr;
    rr.vanilla.resize(n_methods);
    rr.dr.resize(n_methods);
    rr.support.resize(n_methods);
    try {
      Rng rng(Rng::derive(seed, 1000 + static_cast<std::uint64_t>(rep)));
      LoggedDataset ds;
      ds.m = m;
      ds.X = X;
      ds.T.resize(n);
      ds.Y.resize(n);
      la::Vec mu(m);
      for (std::size_t i = 0; i < n; ++i) {
        ds.T[i] = rng.categorical(std::span<const double>(phi_true.row(i), m));
        ds.Y[i] = mu_true(i, static_cast<std::size_t>(ds.T[i])) + spec.sigma * rng.normal();
      }
      const PropensityModel gd = fit_gaussian_discriminant(ds.X, ds.T, m);
      const la::Mat phi_est = gd.predict_all(ds.X);
      const la::Mat mu_hat =
          crossfit(ds, KernelSpec{}, opts.outcome_ridge, opts.crossfit_folds,
                   Rng::derive(seed, 5000 + static_cast<std::uint64_t>(rep)))
              .mu_hat;

      std::vector<la::Vec> weights(n_methods);
      weights[0] = weights_ipw(P, ds.T, phi_true);
      weights[1] = weights_ipw(P, ds.T, phi_est);
      weights[2] = weights_cipw(P, ds.T, phi_true, opts.clip);
      weights[3] = weights_cipw(P, ds.T, phi_est, opts.clip);
      weights[4] = weights_nipw(P, ds.T, phi_true);
      weights[5] = weights_nipw(P, ds.T, phi_est);
      weights[6] = weights_ncipw(P, ds.T, phi_true, opts.clip);
      weights[7] = weights_ncipw(P, ds.T, phi_est, opts.clip);
      BalanceConfig cfg;  // untuned: s=1 Mahalanobis, gamma=1, Lambda=I (CMSE scale)
      cfg.lambda_scalar = opts.cmse_lambda * static_cast<double>(n) * static_cast<double>(n);
      const WeightsSolution sol =
          solve_weights(P, ds.T, cfg, compute_gram_set(cfg.kernels, m, ds.X), {});
      weights[8] = sol.W;

      for (int k = 0; k < n_methods; ++k) {
        rr.vanilla[k] = tau_weighted(weights[k], ds.Y);
        rr.dr[k] = tau_dr(weights[k], P, mu_hat, ds);
        rr.support[k] = support_count(weights[k]);
      }
      rr.ok = true;
    } catch (const std::exception&) {
      rr.ok = false;
    }
    results[rep] = std::move(rr);
  });

  ReplicationReport report;
  report.reps = opts.reps;
  report.seed = seed;
  report.target_sape = target;
  for (int k = 0; k < n_methods; ++k) {
    std::vector<double> v, d, s;
    for (const auto& rr : results) {
      if (!rr.ok) continue;
      v.push_back(rr.vanilla[k]);
      d.push_back(rr.dr[k]);
      s.push_back(rr.support[k]);
    }
    report.rows.push_back(stats_from(weight_names[k], "vanilla", v, s, target));
    report.rows.push_back(stats_from(weight_names[k], "dr", d, s, target));
  }
  for (const auto& rr : results) report.failed_reps += !rr.ok;
  return report;
}

namespace {

// direct-method policy: argmin_t of a fitted outcome model
class ArgminModelPolicy final : public Policy {
 public:
  ArgminModelPolicy(const RegressionModel& rm, int m) : rm_(&rm), m_(m) {}
  int arms() const override { return m_; }
  void probabilities(const double* x, std::size_t, double* out) const override {
    la::Vec mu(m_);
    rm_->predict(x, mu.data());
    int best = 0;
    for (int t = 1; t < m_; ++t)
      if (mu[t] < mu[best]) best = t;
    for (int t = 0; t < m_; ++t) out[t] = (t == best) ? 1.0 : 0.0;
  }

 private:
  const RegressionModel* rm_;
  int m_;
};

}  // namespace

LearningReport run_learning_benchmark(const Example1Spec& spec,
                                      const LearnBenchmarkOptions& opts,
                                      std::uint64_t seed) {
  if (opts.draws < 1) throw std::invalid_argument("benchmark needs draws >= 1");
  const int n_learners = static_cast<int>(opts.learners.size());
  for (const auto& name : opts.learners)
    if (name != "balanced" && name != "balanced-dr" && name != "ipw-logit" &&
        name != "dr-logit" && name != "direct")
      throw std::invalid_argument("unknown learner: " + name);
  std::vector<std::vector<double>> regrets(n_learners);
  for (auto& r : regrets) r.resize(opts.draws);

  parallel_for(opts.draws, opts.threads, [&](int g) {
    Example1Spec dspec = spec;
    dspec.sigma = 0.0;  // Ex. 2 setting
    dspec.seed = Rng::derive(seed, 2000 + static_cast<std::uint64_t>(g));
    const SimDraw draw = gen_example1(dspec);
    const LoggedDataset& ds = draw.ds;

    const PropensityModel gd = fit_gaussian_discriminant(ds.X, ds.T, ds.m);
    const la::Mat phi_est = gd.predict_all(ds.X);
    const la::Mat mu_hat =
        crossfit(ds, KernelSpec{}, opts.outcome_ridge, opts.crossfit_folds,
                 Rng::derive(seed, 3000 + static_cast<std::uint64_t>(g)))
            .mu_hat;

    // the balanced learners run with Lambda = 0 and lambda = 0 (Ex. 2)
    BalanceConfig bcfg;
    bcfg.lambda_scalar = 0.0;
    LearnerConfig lcfg;
    lcfg.restarts = opts.restarts;
    lcfg.threads = 1;  // the draw loop owns the parallelism

    const std::uint64_t eval_seed = Rng::derive(seed, 4000 + static_cast<std::uint64_t>(g));
    for (int L = 0; L < n_learners; ++L) {
      const std::string& name = opts.learners[L];
      lcfg.seed = Rng::derive(dspec.seed, 100 + static_cast<std::uint64_t>(L));
      double rg = std::numeric_limits<double>::quiet_NaN();
      try {
        if (name == "balanced") {
          const LearnResult lr = learn_balanced(ds, bcfg, lcfg);
          rg = regret(LogitPolicy(lr.beta), draw.env, opts.pape_samples, eval_seed);
        } else if (name == "balanced-dr") {
          const LearnResult lr = learn_balanced_dr(ds, bcfg, lcfg, mu_hat);
          rg = regret(LogitPolicy(lr.beta), draw.env, opts.pape_samples, eval_seed);
        } else if (name == "ipw-logit") {
          const LearnResult lr = learn_ipw_logit(ds, phi_est, lcfg);
          rg = regret(LogitPolicy(lr.beta), draw.env, opts.pape_samples, eval_seed);
        } else if (name == "dr-logit") {
          const LearnResult lr = learn_dr_logit(ds, phi_est, mu_hat, lcfg);
          rg = regret(LogitPolicy(lr.beta), draw.env, opts.pape_samples, eval_seed);
        } else if (name == "direct") {
          const RegressionModel rm =
              fit_kernel_ridge_per_arm(ds, KernelSpec{}, opts.outcome_ridge);
          rg = regret(ArgminModelPolicy(rm, ds.m), draw.env, opts.pape_samples, eval_seed);
        }
      } catch (const std::exception&) {
        // leave NaN; aggregation skips it
      }
      regrets[L][g] = rg;
    }
  });

  LearningReport report;
  report.draws = opts.draws;
  report.seed = seed;
  for (int L = 0; L < n_learners; ++L) {
    LearnStats ls;
    ls.method = opts.learners[L];
    Accum acc;
    for (double r : regrets[L])
      if (std::isfinite(r)) {
        acc.add(r);
        ls.regrets.push_back(r);
      }
    ls.mean_regret = acc.mean();
    ls.sd_regret = acc.sd();
    report.rows.push_back(std::move(ls));
  }
  return report;
}

RateReport run_rate_experiment(const RateOptions& opts, std::uint64_t seed) {
  if (opts.n_grid.size() < 2) throw std::invalid_argument("rate experiment needs >= 2 sizes");
  const int m = 3, d = 2, n_anchors = 6;
  const double bandwidth = 1.0;

  // Finite kernel expansion truth: mu_t(x) = sum_j alpha_tj K(x, a_j) with
  // an explicit identity scale, so ||mu_t|| in that RKHS is finite.
  Rng setup(Rng::derive(seed, 0x72617465));
  la::Mat anchors(n_anchors, d);
  for (int j = 0; j < n_anchors; ++j)
    for (int k = 0; k < d; ++k) anchors(j, k) = setup.normal(0.0, 1.2);
  la::Mat alpha(m, n_anchors);
  for (int t = 0; t < m; ++t)
    for (int j = 0; j < n_anchors; ++j) alpha(t, j) = setup.normal(0.0, 1.0);
  la::Mat prop_w(m, d + 1);
  for (int t = 0; t < m; ++t)
    for (int k = 0; k <= d; ++k) prop_w(t, k) = setup.normal(0.0, 0.4);

  KernelSpec truth_kernel;
  truth_kernel.bandwidth = bandwidth;
  truth_kernel.scale = la::Mat::identity(d);

  TrueEnvironment env;
  env.m = m;
  env.d = d;
  env.noise_sd = 0.5;
  env.mu = [anchors, alpha, bandwidth, n_anchors, m](const double* x, double* out) {
    for (int t = 0; t < m; ++t) {
      double acc = 0.0;
      for (int j = 0; j < n_anchors; ++j)
        acc += alpha(t, j) *
               std::exp(-simd::sqdist(x, anchors.row(j), 2) / (bandwidth * bandwidth));
      out[t] = acc;
    }
  };
  env.phi = [prop_w, m](const double* x, double* out) {
    double mx = -1e300;
    for (int t = 0; t < m; ++t) {
      out[t] = prop_w(t, 0) + simd::dot(prop_w.row(t) + 1, x, 2);
      mx = std::max(mx, out[t]);
    }
    double s = 0.0;
    for (int t = 0; t < m; ++t) {
      out[t] = std::exp(out[t] - mx);
      s += out[t];
    }
    for (int t = 0; t < m; ++t) out[t] /= s;
  };
  env.sample_x = [](Rng& rng, double* x) {
    x[0] = rng.normal();
    x[1] = rng.normal();
  };

  // fixed smooth logit policy to evaluate
  la::Mat pol_beta(m, d + 1);
  for (int t = 0; t < m; ++t)
    for (int k = 0; k <= d; ++k) pol_beta(t, k) = setup.normal(0.0, 0.6);
  const LogitPolicy policy(pol_beta);

  BalanceConfig cfg;
  cfg.kernels = {truth_kernel};  // well-specified

  RateReport report;
  report.n_grid = opts.n_grid;
  report.reps = opts.reps;
  report.rmse_balanced.resize(opts.n_grid.size());
  report.rmse_ipw_true.resize(opts.n_grid.size());

  for (std::size_t gi = 0; gi < opts.n_grid.size(); ++gi) {
    const int n = opts.n_grid[gi];
    la::Vec err_bal(opts.reps, 0.0), err_ipw(opts.reps, 0.0);
    parallel_for(opts.reps, opts.threads, [&](int rep) {
      Rng rng(Rng::derive(seed, 7000 + 1000003 * gi + static_cast<std::uint64_t>(rep)));
      LoggedDataset ds;
      ds.m = m;
      ds.X = la::Mat(n, d);
      ds.T.resize(n);
      ds.Y.resize(n);
      la::Mat phi(n, m);
      la::Vec mu(m);
      for (int i = 0; i < n; ++i) {
        env.sample_x(rng, ds.X.row(i));
        env.phi(ds.X.row(i), phi.row(i));
        ds.T[i] = rng.categorical(std::span<const double>(phi.row(i), m));
        env.mu(ds.X.row(i), mu.data());
        ds.Y[i] = mu[ds.T[i]] + env.noise_sd * rng.normal();
      }
      const PolicyAssignment P = assignment_of(policy, ds.X);
      const double target = sape(P, true_mu_matrix(env, ds.X));
      const GramSet grams = compute_gram_set(cfg.kernels, m, ds.X);
      BalanceConfig ncfg = cfg;  // Lambda = I in the CMSE normalization
      ncfg.lambda_scalar = static_cast<double>(n) * static_cast<double>(n);
      const WeightsSolution sol = solve_weights(P, ds.T, ncfg, grams, {});
      err_bal[rep] = tau_weighted(sol.W, ds.Y) - target;
      err_ipw[rep] = tau_weighted(weights_ipw(P, ds.T, phi), ds.Y) - target;
    });
    double sb = 0.0, si = 0.0;
    for (int rep = 0; rep < opts.reps; ++rep) {
      sb += err_bal[rep] * err_bal[rep];
      si += err_ipw[rep] * err_ipw[rep];
    }
    report.rmse_balanced[gi] = std::sqrt(sb / opts.reps);
    report.rmse_ipw_true[gi] = std::sqrt(si / opts.reps);
  }

  auto slope = [&](const la::Vec& rmse) {
    // least-squares slope of log rmse on log n
    const std::size_t k = rmse.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double lx = std::log(static_cast<double>(report.n_grid[i]));
      const double ly = std::log(std::max(rmse[i], 1e-300));
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    return (k * sxy - sx * sy) / (k * sxx - sx * sx);
  };
  report.slope_balanced = slope(report.rmse_balanced);
  report.slope_ipw_true = slope(report.rmse_ipw_true);
  return report;
}

}  // namespace balpol
