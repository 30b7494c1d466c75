#pragma once

#include <cstdint>
#include <vector>

#include "balpol/balance.hpp"
#include "balpol/dataset.hpp"
#include "balpol/kernel.hpp"
#include "balpol/la.hpp"

namespace balpol {

// Probabilistic model of the logging policy phi_t(x). Predictions are
// floored at 1e-12 and renormalized so downstream inverse weighting never
// divides by zero.
class PropensityModel {
 public:
  enum class Kind { multinomial_logit, gaussian_discriminant, known };

  int arms() const { return m_; }
  Kind kind() const { return kind_; }
  const la::Mat& beta() const { return beta_; }

  void predict(const double* x, double* out) const;
  la::Mat predict_all(const la::Mat& X) const;

  static PropensityModel known(la::Mat phi);  // n x m, aligned with dataset rows
  // prediction by row index, only valid for known-propensity models
  void predict_row(std::size_t i, double* out) const;

  friend PropensityModel fit_multinomial_logit(const la::Mat& X,
                                               const std::vector<int>& T, int m);
  friend PropensityModel fit_gaussian_discriminant(const la::Mat& X,
                                                   const std::vector<int>& T, int m);

 private:
  Kind kind_ = Kind::known;
  int m_ = 0;
  la::Mat beta_;  // multinomial logit: m x (d+1), intercept first
  // gaussian discriminant: per-arm mean, Cholesky of ridged covariance,
  // log prior, log-normalizer
  std::vector<la::Vec> means_;
  std::vector<la::Mat> cov_chol_;
  la::Vec log_prior_;
  la::Vec log_norm_;
  la::Mat known_;
};

// Penalized multinomial logistic regression (L2 strength 1e-4 on all
// coefficients), optimized to gradient norm <= 1e-6.
PropensityModel fit_multinomial_logit(const la::Mat& X, const std::vector<int>& T, int m);

// Per-arm Gaussians (own mean and ridged covariance) with prior = arm
// frequency; posterior by Bayes rule.
PropensityModel fit_gaussian_discriminant(const la::Mat& X, const std::vector<int>& T,
                                          int m);

// Per-arm kernel ridge regression on the arm's own subsample, centered on
// the arm's outcome mean (the kernel part fits the residual, so constants
// are reproduced exactly and lambda -> infinity shrinks to the mean).
class RegressionModel {
 public:
  RegressionModel() = default;
  int arms() const { return static_cast<int>(alpha_.size()); }
  void predict(const double* x, double* out_m) const;
  la::Mat predict_all(const la::Mat& X) const;

  friend RegressionModel fit_kernel_ridge_per_arm(const LoggedDataset& ds,
                                                  const KernelSpec& kernel, double ridge);

 private:
  ResolvedKernel rk_;
  std::vector<la::Mat> arm_z_;   // whitened training covariates per arm
  std::vector<la::Vec> alpha_;   // dual coefficients per arm
  la::Vec intercept_;            // per-arm outcome mean (centered fit)
};

RegressionModel fit_kernel_ridge_per_arm(const LoggedDataset& ds, const KernelSpec& kernel,
                                         double ridge);

struct CrossfitResult {
  la::Mat mu_hat;  // n x m, out-of-fold predictions
  bool fallback_used = false;
  std::vector<int> fallback_folds;
};

// K-fold out-of-fold predictions with a seeded permutation partition. A
// fold whose training complement misses an arm falls back to the
// complement's pooled outcome mean for that arm (flagged), which keeps row
// i's prediction independent of Y_i.
CrossfitResult crossfit(const LoggedDataset& ds, const KernelSpec& kernel, double ridge,
                        int folds, std::uint64_t seed);

// log N(Y; c 1, gamma^2 K + noise I) profiled over the constant mean c.
double gp_log_marginal_likelihood(const la::Mat& Xt, const la::Vec& Yt,
                                  const ResolvedKernel& rk, double gamma,
                                  double noise_var);
double gp_log_marginal_likelihood(const la::Mat& Xt, const la::Vec& Yt,
                                  const KernelSpec& kernel, double gamma,
                                  double noise_var);

struct TuneGrid {
  la::Vec bandwidths{1.0};
  la::Vec gammas{1.0};
  la::Vec noises{1.0};
};

struct TuneResult {
  double bandwidth = 1.0;
  double gamma = 1.0;
  double noise_var = 1.0;
  double score = 0.0;  // summed per-arm log marginal likelihood
};

// Maximize the summed per-arm GP log marginal likelihood over the grid;
// ties break toward the smallest bandwidth, then the smallest gamma.
TuneResult tune_hyperparameters(const LoggedDataset& ds, const TuneGrid& grid);

// Fold a tuning result into a balance config (bandwidth and shared gamma;
// Lambda stays whatever the config says).
void apply_tune(BalanceConfig& cfg, const TuneResult& tuned);

}  // namespace balpol
