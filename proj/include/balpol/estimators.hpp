#pragma once

#include <optional>
#include <string>

#include "balpol/balance.hpp"
#include "balpol/dataset.hpp"

namespace balpol {

// tau_W = (1/n) sum_i W_i Y_i
double tau_weighted(const la::Vec& W, const la::Vec& Y);

// tau_{W,mu} = (1/n) sum_i sum_t pi_t(X_i) mu_t(X_i)
//            + (1/n) sum_i W_i (Y_i - mu_{T_i}(X_i))
double tau_dr(const la::Vec& W, const PolicyAssignment& P, const la::Mat& mu_hat,
              const LoggedDataset& ds);

// plug-in direct estimate
double tau_direct(const PolicyAssignment& P, const la::Mat& mu_hat);

// B(W, pi; f) = sum_t (1/n) sum_i (W_i [T_i=t] - pi_t(X_i)) f_t(X_i);
// the conditional-bias functional of Thm-1 style decompositions.
double bias_term(const la::Vec& W, const PolicyAssignment& P, const std::vector<int>& T,
                 const la::Mat& f_values);

// IPW family. phi_hat is n x m; weights use the observed-arm entry.
la::Vec weights_ipw(const PolicyAssignment& P, const std::vector<int>& T,
                    const la::Mat& phi_hat);
la::Vec weights_nipw(const PolicyAssignment& P, const std::vector<int>& T,
                     const la::Mat& phi_hat);
la::Vec weights_cipw(const PolicyAssignment& P, const std::vector<int>& T,
                     const la::Mat& phi_hat, double clip);
la::Vec weights_ncipw(const PolicyAssignment& P, const std::vector<int>& T,
                      const la::Mat& phi_hat, double clip);

struct EvaluationReport {
  double estimate = 0.0;
  std::string method;
  int weights_support = 0;
  std::optional<la::Vec> weights;
  std::optional<WeightsSolution> solution;  // balanced runs only
  bool dr_used = false;
};

int support_count(const la::Vec& W);

struct BalancedEvalOptions {
  SolveOptions solve;
  bool keep_weights = true;
};

// Solve W*(pi) and evaluate: tau_W, or tau_{W,mu} when mu_hat is given.
EvaluationReport evaluate_balanced(const LoggedDataset& ds, const PolicyAssignment& P,
                                   const BalanceConfig& cfg,
                                   const la::Mat* mu_hat = nullptr,
                                   const BalancedEvalOptions& opts = {});
EvaluationReport evaluate_balanced(const LoggedDataset& ds, const PolicyAssignment& P,
                                   const BalanceConfig& cfg, const GramSet& grams,
                                   const la::Mat* mu_hat = nullptr,
                                   const BalancedEvalOptions& opts = {});

}  // namespace balpol
