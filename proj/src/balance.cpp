#include "balpol/balance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "balpol/simd.hpp"

namespace balpol {

void BalanceConfig::validate(int m) const {
  if (p != 2) throw std::invalid_argument("unsupported exponent p=" + std::to_string(p) +
                                          " (only p=2 is implemented)");
  for (double g : gamma)
    if (!(g > 0.0)) throw std::invalid_argument("gamma entries must be positive");
  if (gamma.size() != 1 && gamma.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("gamma must have 1 or m entries");
  if (kernels.size() != 1 && kernels.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("kernels must have 1 or m entries");
}

double imbalance_sq(const la::Vec& W, const la::Mat& P, const std::vector<int>& T,
                    const GramMatrix& K_t, int t) {
  const std::size_t n = W.size();
  la::Vec z(n);
  for (std::size_t i = 0; i < n; ++i)
    z[i] = (T[i] == t ? W[i] : 0.0) - P(i, static_cast<std::size_t>(t));
  return la::quadform(K_t.K, z.data(), z.data());
}

namespace {

double variance_term_of(const la::Vec& W, const BalanceConfig& cfg) {
  const double n = static_cast<double>(W.size());
  if (cfg.lambda_matrix)
    return la::quadform(*cfg.lambda_matrix, W.data(), W.data()) / (n * n);
  return cfg.lambda_scalar * simd::dot(W.data(), W.data(), W.size()) / (n * n);
}

}  // namespace

ObjectiveParts objective(const la::Vec& W, const PolicyAssignment& P,
                         const std::vector<int>& T, const BalanceConfig& cfg,
                         const GramSet& grams) {
  const int m = P.m();
  cfg.validate(m);
  ObjectiveParts parts;
  parts.imbalance_sq_per_arm.resize(m);
  for (int t = 0; t < m; ++t) {
    const double b2 = imbalance_sq(W, P.P, T, grams.arm(t), t);
    parts.imbalance_sq_per_arm[t] = b2;
    const double g = cfg.gamma_for(t);
    parts.total += g * g * b2;
  }
  parts.variance_term = variance_term_of(W, cfg);
  parts.total += parts.variance_term;
  return parts;
}

double QpForm::eval(const la::Vec& W) const {
  return la::quadform(Q, W.data(), W.data()) - 2.0 * simd::dot(c.data(), W.data(), W.size()) +
         constant;
}

la::Mat assemble_qp_quadratic(const std::vector<int>& T, const BalanceConfig& cfg,
                              const GramSet& grams, std::size_t n) {
  la::Mat Q(n, n);
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = T[i];
    const double g2 = cfg.gamma_for(t) * cfg.gamma_for(t);
    const la::Mat& K = grams.arm(t).K;
    for (std::size_t j = 0; j < n; ++j)
      if (T[j] == t) Q(i, j) = g2 * K(i, j);
  }
  if (cfg.lambda_matrix) {
    const la::Mat& L = *cfg.lambda_matrix;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) Q(i, j) += L(i, j) / n2;
  } else if (cfg.lambda_scalar != 0.0) {
    for (std::size_t i = 0; i < n; ++i) Q(i, i) += cfg.lambda_scalar / n2;
  }
  return Q;
}

void assemble_qp_linear(QpForm& qp, const PolicyAssignment& P, const std::vector<int>& T,
                        const BalanceConfig& cfg, const GramSet& grams) {
  const std::size_t n = P.n();
  const int m = P.m();
  qp.c.assign(n, 0.0);
  qp.constant = 0.0;
  la::Vec pt(n), kp(n);
  for (int t = 0; t < m; ++t) {
    const double g2 = cfg.gamma_for(t) * cfg.gamma_for(t);
    const la::Mat& K = grams.arm(t).K;
    for (std::size_t i = 0; i < n; ++i) pt[i] = P.P(i, static_cast<std::size_t>(t));
    la::matvec(K, pt.data(), kp.data());
    for (std::size_t i = 0; i < n; ++i)
      if (T[i] == t) qp.c[i] += g2 * kp[i];
    qp.constant += g2 * simd::dot(pt.data(), kp.data(), n);
  }
}

QpForm assemble_qp(const PolicyAssignment& P, const std::vector<int>& T,
                   const BalanceConfig& cfg, const GramSet& grams) {
  cfg.validate(P.m());
  QpForm qp;
  qp.Q = assemble_qp_quadratic(T, cfg, grams, P.n());
  assemble_qp_linear(qp, P, T, cfg, grams);
  return qp;
}

void project_scaled_simplex(la::Vec& w, double total) {
  const std::size_t n = w.size();
  la::Vec u = w;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    css += u[k];
    const double th = (css - total) / static_cast<double>(k + 1);
    if (u[k] - th > 0.0) theta = th;
  }
  for (double& v : w) v = std::max(v - theta, 0.0);
}

namespace {

// gradient of W^T Q W - 2 c^T W
void qp_gradient(const QpForm& qp, const la::Vec& W, la::Vec& g) {
  la::matvec(qp.Q, W.data(), g.data());
  for (std::size_t i = 0; i < W.size(); ++i) g[i] = 2.0 * (g[i] - qp.c[i]);
}

double lambda_from_support(const la::Vec& g, const std::vector<bool>& support) {
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (support[i]) {
      s += g[i];
      ++k;
    }
  return k ? -s / static_cast<double>(k) : 0.0;
}

double kkt_residual_impl(const la::Vec& W, double lambda, const QpForm& qp,
                         const std::vector<bool>& support) {
  const std::size_t n = W.size();
  la::Vec g(n);
  qp_gradient(qp, W, g);
  double r = std::fabs(simd::sum(W.data(), n) - static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = g[i] + lambda;  // dual of W_i >= 0
    r = std::max(r, -W[i]);
    if (support[i]) r = std::max(r, std::fabs(mu));
    else r = std::max(r, std::max(0.0, -mu));
    r = std::max(r, std::fabs(mu * W[i]) / std::max(1.0, static_cast<double>(n)));
  }
  return r;
}

std::vector<bool> support_of(const la::Vec& W) {
  const double thr = active_threshold(W.size());
  std::vector<bool> s(W.size());
  for (std::size_t i = 0; i < W.size(); ++i) s[i] = W[i] > thr;
  return s;
}

// Largest eigenvalue of 2Q via a few power iterations; step size for the
// projected-gradient phase.
double lipschitz_estimate(const la::Mat& Q) {
  const std::size_t n = Q.rows();
  la::Vec v(n, 1.0 / std::sqrt(static_cast<double>(n))), qv(n);
  double lam = 1.0;
  for (int it = 0; it < 12; ++it) {
    la::matvec(Q, v.data(), qv.data());
    lam = std::sqrt(simd::dot(qv.data(), qv.data(), n));
    if (lam <= 0.0) return 1.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = qv[i] / lam;
  }
  return 2.0 * lam;
}

struct ReducedSolve {
  la::Vec w_free;
  double lambda = 0.0;
  bool ok = false;
};

// Equality-constrained QP on the free set: min w^T Q_FF w - 2 c_F^T w
// s.t. 1^T w = total. Schur complement through a Cholesky of Q_FF, plus
// two rounds of iterative refinement: RBF Gram blocks can be poorly
// conditioned and the KKT residual contract is absolute.
ReducedSolve solve_reduced(const QpForm& qp, const std::vector<std::size_t>& free,
                           double total) {
  const std::size_t k = free.size();
  ReducedSolve rs;
  la::Mat qff(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) qff(a, b) = qp.Q(free[a], free[b]);
  auto chol = la::cholesky_with_ridge(qff, 1e-13);
  if (!chol) return rs;
  la::Vec u(k), v(k, 1.0), cf(k);
  for (std::size_t a = 0; a < k; ++a) cf[a] = qp.c[free[a]];
  u = cf;
  la::chol_solve(*chol, u.data());
  la::chol_solve(*chol, v.data());
  const double sv = simd::sum(v.data(), k);
  if (sv <= 0.0) return rs;
  double half_lambda = (simd::sum(u.data(), k) - total) / sv;
  la::Vec w(k);
  for (std::size_t a = 0; a < k; ++a) w[a] = u[a] - half_lambda * v[a];

  la::Vec r1(k), qw(k);
  for (int pass = 0; pass < 2; ++pass) {
    la::matvec(qff, w.data(), qw.data());
    for (std::size_t a = 0; a < k; ++a) r1[a] = cf[a] - qw[a] - half_lambda;
    const double r2 = total - simd::sum(w.data(), k);
    la::chol_solve(*chol, r1.data());  // du
    const double dhl = (simd::sum(r1.data(), k) - r2) / sv;
    for (std::size_t a = 0; a < k; ++a) w[a] += r1[a] - dhl * v[a];
    half_lambda += dhl;
  }

  rs.w_free = std::move(w);
  rs.lambda = 2.0 * half_lambda;  // gradient convention: g + lambda = mu
  rs.ok = true;
  return rs;
}

WeightsSolution finish_solution(la::Vec W, double lambda, int iters, const QpForm& qp,
                                const PolicyAssignment& P, const std::vector<int>& T,
                                const BalanceConfig& cfg, const GramSet& grams) {
  const std::size_t n = W.size();
  for (double& w : W) {
    if (w < 0.0 && w > -1e-12) w = 0.0;
  }
  const double s = simd::sum(W.data(), n);
  if (s > 0.0 && std::fabs(s - static_cast<double>(n)) < 1e-6 * n) {
    const double scale = static_cast<double>(n) / s;
    for (double& w : W) w *= scale;
  }
  WeightsSolution sol;
  sol.kkt_residual = kkt_residual_impl(W, lambda, qp, support_of(W));
  sol.lambda_dual = lambda;
  sol.iterations = iters;
  const ObjectiveParts parts = objective(W, P, T, cfg, grams);
  sol.objective = parts.total;
  sol.variance_term = parts.variance_term;
  sol.imbalance_per_arm.resize(parts.imbalance_sq_per_arm.size());
  for (std::size_t t = 0; t < sol.imbalance_per_arm.size(); ++t)
    sol.imbalance_per_arm[t] = std::sqrt(std::max(parts.imbalance_sq_per_arm[t], 0.0));
  const double thr = active_threshold(n);
  sol.active_set.resize(n);
  for (std::size_t i = 0; i < n; ++i) sol.active_set[i] = W[i] > thr;
  sol.W = std::move(W);
  return sol;
}

}  // namespace

double kkt_residual(const la::Vec& W, double lambda, const QpForm& qp) {
  return kkt_residual_impl(W, lambda, qp, support_of(W));
}

double kkt_residual_inferred(const la::Vec& W, const QpForm& qp) {
  la::Vec g(W.size());
  qp_gradient(qp, W, g);
  const auto support = support_of(W);
  return kkt_residual_impl(W, lambda_from_support(g, support), qp, support);
}

WeightsSolution solve_weights_qp(const QpForm& qp, const PolicyAssignment& P,
                                 const std::vector<int>& T, const BalanceConfig& cfg,
                                 const GramSet& grams, const SolveOptions& opts) {
  const std::size_t n = P.n();
  const double total = static_cast<double>(n);
  la::Vec W(n, 1.0);
  if (opts.warm_start && opts.warm_start->size() == n) {
    W = *opts.warm_start;
    project_scaled_simplex(W, total);
  }

  int iters = 0;
  la::Vec g(n), trial(n), d(n), qd(n);

  // Phase 1: projected gradient with exact line search. Cheap iterations
  // that find the active face; the refinement below makes it exact.
  const double step = 1.0 / std::max(lipschitz_estimate(qp.Q), 1e-12);
  const int pg_budget = std::min(opts.max_iters / 2, 300);
  for (int it = 0; it < pg_budget; ++it) {
    ++iters;
    qp_gradient(qp, W, g);
    for (std::size_t i = 0; i < n; ++i) trial[i] = W[i] - step * g[i];
    project_scaled_simplex(trial, total);
    for (std::size_t i = 0; i < n; ++i) d[i] = trial[i] - W[i];
    const double dn = simd::dot(d.data(), d.data(), n);
    if (dn < 1e-24 * total) break;
    la::matvec(qp.Q, d.data(), qd.data());
    const double curv = simd::dot(d.data(), qd.data(), n);
    double t = 1.0;
    if (curv > 0.0) t = std::clamp(-0.5 * simd::dot(g.data(), d.data(), n) / curv, 0.0, 1.0);
    if (t <= 0.0) break;
    simd::axpy(n, t, d.data(), W.data());
  }

  // Phase 2: primal active set on the face found above. Reduced solves are
  // exact, so convergence leaves a machine-precision KKT residual.
  std::vector<bool> in_free(n);
  {
    const double thr = active_threshold(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      in_free[i] = W[i] > thr;
      any = any || in_free[i];
    }
    if (!any) {
      qp_gradient(qp, W, g);
      in_free[std::min_element(g.begin(), g.end()) - g.begin()] = true;
    }
    // make W consistent with the chosen face
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_free[i]) W[i] = 0.0;
      s += W[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      if (in_free[i]) W[i] *= total / s;
  }

  double lambda = 0.0;
  WeightsSolution best;
  double best_resid = std::numeric_limits<double>::infinity();
  auto track_best = [&](const la::Vec& w, double lam) {
    const double r = kkt_residual_impl(w, lam, qp, support_of(w));
    if (r < best_resid) {
      best_resid = r;
      best = finish_solution(w, lam, iters, qp, P, T, cfg, grams);
    }
  };

  while (iters < opts.max_iters) {
    ++iters;
    std::vector<std::size_t> free;
    free.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      if (in_free[i]) free.push_back(i);
    const ReducedSolve rs = solve_reduced(qp, free, total);
    if (!rs.ok) {
      track_best(W, lambda);
      throw SolverError("reduced QP system could not be factorized", best);
    }
    lambda = rs.lambda;

    double min_w = 0.0;
    for (double w : rs.w_free) min_w = std::min(min_w, w);
    if (min_w >= -1e-12) {
      for (std::size_t a = 0; a < free.size(); ++a) W[free[a]] = std::max(rs.w_free[a], 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (!in_free[i]) W[i] = 0.0;
      // dual feasibility off the face
      qp_gradient(qp, W, g);
      double worst = -1e-10;
      std::size_t worst_i = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (in_free[i]) continue;
        const double mu = g[i] + lambda;
        if (mu < worst) {
          worst = mu;
          worst_i = i;
        }
      }
      if (worst_i == n) {
        return finish_solution(std::move(W), lambda, iters, qp, P, T, cfg, grams);
      }
      in_free[worst_i] = true;
      continue;
    }

    // target leaves the nonnegative orthant: ratio test, drop one blocker
    double alpha = 1.0;
    std::size_t blocker = n;
    for (std::size_t a = 0; a < free.size(); ++a) {
      const double cur = W[free[a]];
      const double tgt = rs.w_free[a];
      if (tgt < cur) {
        const double astep = cur / (cur - tgt);
        if (astep < alpha) {
          alpha = astep;
          blocker = free[a];
        }
      }
    }
    for (std::size_t a = 0; a < free.size(); ++a)
      W[free[a]] += alpha * (rs.w_free[a] - W[free[a]]);
    if (blocker != n) {
      W[blocker] = 0.0;
      in_free[blocker] = false;
      // keep at least one free coordinate
      if (std::none_of(in_free.begin(), in_free.end(), [](bool b) { return b; }))
        in_free[blocker] = true;
    }
  }

  track_best(W, lambda);
  if (best_resid <= opts.tol) return best;
  throw SolverError("weights QP did not converge within max iterations", best);
}

WeightsSolution solve_weights(const PolicyAssignment& P, const std::vector<int>& T,
                              const BalanceConfig& cfg, const GramSet& grams,
                              const SolveOptions& opts) {
  cfg.validate(P.m());
  const QpForm qp = assemble_qp(P, T, cfg, grams);
  return solve_weights_qp(qp, P, T, cfg, grams, opts);
}

}  // namespace balpol
