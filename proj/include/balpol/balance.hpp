#pragma once

#include <stdexcept>
#include <vector>

#include "balpol/dataset.hpp"
#include "balpol/kernel.hpp"
#include "balpol/la.hpp"

namespace balpol {

// Configuration of the worst-case-CMSE objective
//   E^2(W, pi) = sum_t gamma_t^2 B_t^2(W, pi_t) + (1/n^2) W^T Lambda W
// over W in the scaled simplex {W >= 0, sum W = n}. Only p = 2 (the QP
// case) is supported; p = 1 and infinity are rejected, not approximated.
struct BalanceConfig {
  std::vector<double> gamma{1.0};       // size 1 (shared) or m
  double lambda_scalar = 1.0;           // Lambda = kappa I unless a matrix is given
  std::optional<la::Mat> lambda_matrix;  // explicit n x n PSD
  int p = 2;
  std::vector<KernelSpec> kernels{KernelSpec{}};  // size 1 (shared) or m

  double gamma_for(int t) const {
    return gamma.size() == 1 ? gamma[0] : gamma.at(t);
  }
  const KernelSpec& kernel_for(int t) const {
    return kernels.size() == 1 ? kernels[0] : kernels.at(t);
  }
  void validate(int m) const;
};

struct WeightsSolution {
  la::Vec W;
  double objective = 0.0;            // E^2 at W
  la::Vec imbalance_per_arm;         // B_t (not squared)
  double variance_term = 0.0;        // (1/n^2) W^T Lambda W
  std::vector<bool> active_set;      // W_i > 1e-8 n
  double kkt_residual = 0.0;
  double lambda_dual = 0.0;          // multiplier of the sum constraint
  int iterations = 0;
};

// Threshold below which a weight counts as zero when reporting the active
// set (feeds the A matrix of the implicit gradient).
inline double active_threshold(std::size_t n) { return 1e-8 * static_cast<double>(n); }

// z^T K_t z with z_i = W_i [T_i = t] - P_t[i]; the squared MMD-type
// imbalance for arm t.
double imbalance_sq(const la::Vec& W, const la::Mat& P, const std::vector<int>& T,
                    const GramMatrix& K_t, int t);

struct ObjectiveParts {
  double total = 0.0;
  la::Vec imbalance_sq_per_arm;
  double variance_term = 0.0;
};

ObjectiveParts objective(const la::Vec& W, const PolicyAssignment& P,
                         const std::vector<int>& T, const BalanceConfig& cfg,
                         const GramSet& grams);

// E^2(W) = W^T Q W - 2 c^T W + constant
struct QpForm {
  la::Mat Q;
  la::Vec c;
  double constant = 0.0;
  double eval(const la::Vec& W) const;
};

// Q and the constant-in-P quadratic part depend only on (T, cfg, grams);
// c and the constant depend on P too. Split so the learner can rebuild the
// linear part cheaply while iterating over policies.
la::Mat assemble_qp_quadratic(const std::vector<int>& T, const BalanceConfig& cfg,
                              const GramSet& grams, std::size_t n);
void assemble_qp_linear(QpForm& qp, const PolicyAssignment& P, const std::vector<int>& T,
                        const BalanceConfig& cfg, const GramSet& grams);
QpForm assemble_qp(const PolicyAssignment& P, const std::vector<int>& T,
                   const BalanceConfig& cfg, const GramSet& grams);

struct SolveOptions {
  double tol = 1e-7;      // KKT residual target
  int max_iters = 2000;   // combined projected-gradient + active-set budget
  const la::Vec* warm_start = nullptr;
};

// Thrown when the QP solver exhausts its budget; carries the best iterate.
struct SolverError : std::runtime_error {
  SolverError(const std::string& msg, WeightsSolution b)
      : std::runtime_error(msg), best(std::move(b)) {}
  WeightsSolution best;
};

WeightsSolution solve_weights(const PolicyAssignment& P, const std::vector<int>& T,
                              const BalanceConfig& cfg, const GramSet& grams,
                              const SolveOptions& opts = {});
// Same, but with a prebuilt QP (the learner path).
WeightsSolution solve_weights_qp(const QpForm& qp, const PolicyAssignment& P,
                                 const std::vector<int>& T, const BalanceConfig& cfg,
                                 const GramSet& grams, const SolveOptions& opts);

// Max-norm KKT residual of the simplex QP at (W, lambda): stationarity on
// the support, dual feasibility off it, complementary slackness, and
// feasibility of W itself.
double kkt_residual(const la::Vec& W, double lambda, const QpForm& qp);
// Same with the best lambda inferred from W's support.
double kkt_residual_inferred(const la::Vec& W, const QpForm& qp);

// Euclidean projection onto {w >= 0, sum w = total}.
void project_scaled_simplex(la::Vec& w, double total);

}  // namespace balpol
