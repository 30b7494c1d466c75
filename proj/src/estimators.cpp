#include "balpol/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "balpol/simd.hpp"

namespace balpol {

double tau_weighted(const la::Vec& W, const la::Vec& Y) {
  if (W.size() != Y.size()) throw std::invalid_argument("tau_weighted length mismatch");
  return simd::dot(W.data(), Y.data(), W.size()) / static_cast<double>(W.size());
}

double tau_dr(const la::Vec& W, const PolicyAssignment& P, const la::Mat& mu_hat,
              const LoggedDataset& ds) {
  const std::size_t n = ds.n();
  if (W.size() != n || P.n() != n || mu_hat.rows() != n)
    throw std::invalid_argument("tau_dr shape mismatch");
  double direct = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    direct += simd::dot(P.P.row(i), mu_hat.row(i), P.P.cols());
    resid += W[i] * (ds.Y[i] - mu_hat(i, static_cast<std::size_t>(ds.T[i])));
  }
  return (direct + resid) / static_cast<double>(n);
}

double tau_direct(const PolicyAssignment& P, const la::Mat& mu_hat) {
  const std::size_t n = P.n();
  if (mu_hat.rows() != n || mu_hat.cols() != P.P.cols())
    throw std::invalid_argument("tau_direct shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += simd::dot(P.P.row(i), mu_hat.row(i), P.P.cols());
  return acc / static_cast<double>(n);
}

double bias_term(const la::Vec& W, const PolicyAssignment& P, const std::vector<int>& T,
                 const la::Mat& f_values) {
  const std::size_t n = W.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ti = static_cast<std::size_t>(T[i]);
    acc += W[i] * f_values(i, ti);
    acc -= simd::dot(P.P.row(i), f_values.row(i), P.P.cols());
  }
  return acc / static_cast<double>(n);
}

la::Vec weights_ipw(const PolicyAssignment& P, const std::vector<int>& T,
                    const la::Mat& phi_hat) {
  const std::size_t n = P.n();
  la::Vec w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ti = static_cast<std::size_t>(T[i]);
    const double phi = phi_hat(i, ti);
    if (!(phi > 0.0))
      throw std::invalid_argument("zero propensity on observed arm at row " +
                                  std::to_string(i));
    w[i] = P.P(i, ti) / phi;
  }
  return w;
}

namespace {

la::Vec normalize_to_n(la::Vec w) {
  const double s = simd::sum(w.data(), w.size());
  if (!(s > 0.0))
    throw std::invalid_argument("policy has no overlap with logged actions");
  const double scale = static_cast<double>(w.size()) / s;
  for (double& v : w) v *= scale;
  return w;
}

}  // namespace

la::Vec weights_nipw(const PolicyAssignment& P, const std::vector<int>& T,
                     const la::Mat& phi_hat) {
  return normalize_to_n(weights_ipw(P, T, phi_hat));
}

la::Vec weights_cipw(const PolicyAssignment& P, const std::vector<int>& T,
                     const la::Mat& phi_hat, double clip) {
  if (!(clip > 0.0)) throw std::invalid_argument("clip level must be positive");
  const std::size_t n = P.n();
  la::Vec w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ti = static_cast<std::size_t>(T[i]);
    w[i] = P.P(i, ti) / std::max(clip, phi_hat(i, ti));
  }
  return w;
}

la::Vec weights_ncipw(const PolicyAssignment& P, const std::vector<int>& T,
                      const la::Mat& phi_hat, double clip) {
  return normalize_to_n(weights_cipw(P, T, phi_hat, clip));
}

int support_count(const la::Vec& W) {
  const double thr = active_threshold(W.size());
  int k = 0;
  for (double w : W)
    if (w > thr) ++k;
  return k;
}

EvaluationReport evaluate_balanced(const LoggedDataset& ds, const PolicyAssignment& P,
                                   const BalanceConfig& cfg, const GramSet& grams,
                                   const la::Mat* mu_hat, const BalancedEvalOptions& opts) {
  WeightsSolution sol = solve_weights(P, ds.T, cfg, grams, opts.solve);
  EvaluationReport rep;
  rep.method = mu_hat ? "balanced-dr" : "balanced";
  rep.dr_used = mu_hat != nullptr;
  rep.estimate = mu_hat ? tau_dr(sol.W, P, *mu_hat, ds) : tau_weighted(sol.W, ds.Y);
  rep.weights_support = support_count(sol.W);
  if (opts.keep_weights) rep.weights = sol.W;
  rep.solution = std::move(sol);
  return rep;
}

EvaluationReport evaluate_balanced(const LoggedDataset& ds, const PolicyAssignment& P,
                                   const BalanceConfig& cfg, const la::Mat* mu_hat,
                                   const BalancedEvalOptions& opts) {
  std::vector<KernelSpec> specs = cfg.kernels;
  const GramSet grams = compute_gram_set(specs, ds.m, ds.X);
  return evaluate_balanced(ds, P, cfg, grams, mu_hat, opts);
}

}  // namespace balpol
