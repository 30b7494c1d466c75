#pragma once

#include <functional>
#include <string>
#include <vector>

#include "balpol/la.hpp"

namespace balpol {

class Rng;

// Logged bandit data: covariates, enacted treatments, observed outcomes.
// Outcomes are costs (smaller is better). Treatments are 0-based in memory;
// the CSV boundary is 1-based.
struct LoggedDataset {
  la::Mat X;           // n x d
  std::vector<int> T;  // values in 0..m-1
  la::Vec Y;
  int m = 0;

  std::size_t n() const { return Y.size(); }
  std::size_t dim() const { return X.cols(); }
};

struct ValidationResult {
  bool ok = true;
  std::vector<std::string> violations;
};

ValidationResult validate_dataset(const LoggedDataset& ds);

// Row-stochastic n x m matrix P with P(i,t) = pi_t(X_i). The only view of a
// policy the balance machinery needs.
struct PolicyAssignment {
  la::Mat P;
  std::size_t n() const { return P.rows(); }
  int m() const { return static_cast<int>(P.cols()); }
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int arms() const = 0;
  // write pi_1..pi_m(x) into out
  virtual void probabilities(const double* x, std::size_t d, double* out) const = 0;
};

PolicyAssignment assignment_of(const Policy& policy, const la::Mat& X);

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(int m) : m_(m) {}
  int arms() const override { return m_; }
  void probabilities(const double*, std::size_t, double* out) const override {
    for (int t = 0; t < m_; ++t) out[t] = 1.0 / m_;
  }

 private:
  int m_;
};

class DeterministicPolicy final : public Policy {
 public:
  DeterministicPolicy(int arm, int m) : arm_(arm), m_(m) {}
  int arms() const override { return m_; }
  void probabilities(const double*, std::size_t, double* out) const override {
    for (int t = 0; t < m_; ++t) out[t] = (t == arm_) ? 1.0 : 0.0;
  }

 private:
  int arm_, m_;
};

// Softmax-linear policy, beta is m x (d+1) with the intercept first.
class LogitPolicy final : public Policy {
 public:
  explicit LogitPolicy(la::Mat beta) : beta_(std::move(beta)) {}
  int arms() const override { return static_cast<int>(beta_.rows()); }
  void probabilities(const double* x, std::size_t d, double* out) const override;
  const la::Mat& beta() const { return beta_; }

 private:
  la::Mat beta_;
};

// Simulation-only truth carrier: mean-outcome functions, logging
// propensities, noise level, and the covariate marginal.
struct TrueEnvironment {
  int m = 0;
  int d = 0;
  double noise_sd = 0.0;
  std::function<void(const double* x, double* mu_out)> mu;
  std::function<void(const double* x, double* phi_out)> phi;
  std::function<void(Rng& rng, double* x_out)> sample_x;
};

// CSV with header x1,...,xd,t,y; t is 1-based. m defaults to max(t).
LoggedDataset load_dataset_csv(const std::string& path, bool maximize = false,
                               int m_override = 0);
void write_dataset_csv(const std::string& path, const LoggedDataset& ds);

// Plain numeric matrix CSV with a header row (used for known propensities
// and explicit policy assignments).
la::Mat load_matrix_csv(const std::string& path);

}  // namespace balpol
