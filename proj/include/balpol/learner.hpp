#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "balpol/balance.hpp"
#include "balpol/dataset.hpp"

namespace balpol {

// Numerically stable softmax rows of beta (m x (d+1), intercept first)
// applied to every covariate row.
PolicyAssignment softmax_assignment(const la::Mat& beta, const la::Mat& X);

struct LearnerConfig {
  double lambda_reg = 0.0;  // weight of the E regularizer in Eq. (1)/(2)
  int restarts = 10;
  double grad_tol = 1e-6;
  int max_iters = 200;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  int threads = 0;  // 0 = hardware concurrency
};

// Pieces reusable across every gradient evaluation for a fixed dataset and
// balance config: Q, its null-space projection of the inverse Hessian, and
// the per-arm J products. Building Htilde costs one (n-1)^3 factorization;
// the per-iteration work is then one LU of the active-set system.
struct ImplicitGradContext {
  la::Mat Q;        // quadratic part of E^2
  la::Mat Htilde;   // -F (F^T H F)^-1 F^T with H = 2Q
};

ImplicitGradContext make_implicit_context(const std::vector<int>& T,
                                          const BalanceConfig& cfg, const GramSet& grams,
                                          std::size_t n);

// Gradients of tau_{W*(pi)} (or the DR version when mu_hat is given) and of
// E(W*(pi), pi) with respect to the policy assignment entries pi_t(X_i).
// residual is Y for the vanilla objective, eps_hat = Y - mu_{T_i} for DR.
struct PolicyGradients {
  la::Mat d_tau;  // n x m
  la::Mat d_reg;  // n x m
};

PolicyGradients thm5_gradients(const WeightsSolution& sol, const la::Vec& residual,
                               const PolicyAssignment& P, const std::vector<int>& T,
                               const BalanceConfig& cfg, const GramSet& grams,
                               const ImplicitGradContext& ctx,
                               const la::Mat* mu_hat = nullptr);

// Chain rule from per-assignment gradients to the logit parameters:
// d pi_t(x)/d beta_s = pi_t(x) ([t=s] - pi_s(x)) (1, x).
la::Mat chain_to_beta(const la::Mat& grad_P, const PolicyAssignment& P, const la::Mat& X);

struct IterRecord {
  int restart = 0;
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  int active_size = 0;
};

struct LearnResult {
  la::Mat beta;
  double objective = 0.0;
  int best_restart = 0;
  std::vector<IterRecord> trace;
};

LearnResult learn_balanced(const LoggedDataset& ds, const BalanceConfig& cfg,
                           const LearnerConfig& lcfg);
LearnResult learn_balanced_dr(const LoggedDataset& ds, const BalanceConfig& cfg,
                              const LearnerConfig& lcfg, const la::Mat& mu_hat);

// Gradient-based baselines: BFGS with restarts on the smooth IPW / DR
// surrogate objectives over the logit class.
LearnResult learn_ipw_logit(const LoggedDataset& ds, const la::Mat& phi_hat,
                            const LearnerConfig& lcfg);
LearnResult learn_dr_logit(const LoggedDataset& ds, const la::Mat& phi_hat,
                           const la::Mat& mu_hat, const LearnerConfig& lcfg);

}  // namespace balpol
