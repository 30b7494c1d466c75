#include "balpol/learner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "balpol/bfgs.hpp"
#include "balpol/estimators.hpp"
#include "balpol/rng.hpp"
#include "balpol/simd.hpp"

namespace balpol {

PolicyAssignment softmax_assignment(const la::Mat& beta, const la::Mat& X) {
  const std::size_t n = X.rows(), d = X.cols();
  const int m = static_cast<int>(beta.rows());
  if (beta.cols() != d + 1) throw std::invalid_argument("softmax_assignment shape mismatch");
  PolicyAssignment pa{la::Mat(n, m)};
  for (std::size_t i = 0; i < n; ++i) {
    double* row = pa.P.row(i);
    double mx = -1e300;
    for (int t = 0; t < m; ++t) {
      row[t] = beta(t, 0) + simd::dot(beta.row(t) + 1, X.row(i), d);
      mx = std::max(mx, row[t]);
    }
    double s = 0.0;
    for (int t = 0; t < m; ++t) {
      row[t] = std::exp(row[t] - mx);
      s += row[t];
    }
    for (int t = 0; t < m; ++t) row[t] /= s;
  }
  return pa;
}

ImplicitGradContext make_implicit_context(const std::vector<int>& T,
                                          const BalanceConfig& cfg, const GramSet& grams,
                                          std::size_t n) {
  ImplicitGradContext ctx;
  ctx.Q = assemble_qp_quadratic(T, cfg, grams, n);

  // G = F^T H F with H = 2Q and F_ij = delta_ij - delta_in:
  // G_ij = H_ij - H_in - H_nj + H_nn
  const std::size_t k = n - 1;
  la::Mat G(k, k);
  const double h_nn = 2.0 * ctx.Q(n - 1, n - 1);
  for (std::size_t i = 0; i < k; ++i) {
    const double h_in = 2.0 * ctx.Q(i, n - 1);
    for (std::size_t j = 0; j < k; ++j)
      G(i, j) = 2.0 * ctx.Q(i, j) - h_in - 2.0 * ctx.Q(n - 1, j) + h_nn;
  }
  auto chol = la::cholesky_with_ridge(std::move(G), 1e-10);
  if (!chol) throw std::runtime_error("F^T H F not positive definite");

  // Z = G^-1 F^T, where F^T columns are e_1..e_{n-1} and -1 in the last.
  // Htilde = -F Z: rows 1..n-1 are -Z, the last row is the column sums of Z.
  la::Mat Z(k, n);
  la::Vec col(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    la::chol_solve(*chol, col.data());
    for (std::size_t i = 0; i < k; ++i) Z(i, j) = col[i];
  }
  std::fill(col.begin(), col.end(), -1.0);
  la::chol_solve(*chol, col.data());
  for (std::size_t i = 0; i < k; ++i) Z(i, n - 1) = col[i];

  ctx.Htilde = la::Mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double colsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      ctx.Htilde(i, j) = -Z(i, j);
      colsum += Z(i, j);
    }
    ctx.Htilde(n - 1, j) = colsum;
  }
  return ctx;
}

PolicyGradients thm5_gradients(const WeightsSolution& sol, const la::Vec& residual,
                               const PolicyAssignment& P, const std::vector<int>& T,
                               const BalanceConfig& cfg, const GramSet& grams,
                               const ImplicitGradContext& ctx, const la::Mat* mu_hat) {
  const std::size_t n = residual.size();
  const int m = P.m();
  const double n_real = static_cast<double>(n);

  // w = Htilde residual (Htilde is symmetric)
  la::Vec w(n);
  la::matvec(ctx.Htilde, residual.data(), w.data());

  // Solve B^T y = w with B = A + (I - A) Htilde, A = diag(active set).
  // B^T_ij = a_j delta_ij + (1 - a_j) Htilde_ij since Htilde is symmetric.
  la::Mat bt(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      bt(i, j) = sol.active_set[j] ? (i == j ? 1.0 : 0.0) : ctx.Htilde(i, j);
  la::Lu lu = la::lu_factor(bt);
  if (!lu.ok) {
    // ridge retry per the gradient contract
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += std::fabs(bt(i, i));
    const double ridge = 1e-10 * tr / n_real;
    la::Mat bt2 = bt;
    for (std::size_t i = 0; i < n; ++i) bt2(i, i) += ridge;
    lu = la::lu_factor(std::move(bt2));
    if (!lu.ok) throw std::runtime_error("active-set system singular in implicit gradient");
  }
  la::Vec y = w;
  la::lu_solve(lu, y.data());
  // v^T = w^T - y^T (I-A) Htilde  =>  v = w - Htilde ((I-A) y)
  la::Vec u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = sol.active_set[i] ? 0.0 : y[i];
  la::Vec hu(n);
  la::matvec(ctx.Htilde, u.data(), hu.data());
  la::Vec v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = w[i] - hu[i];

  PolicyGradients out;
  out.d_tau = la::Mat(n, m);
  out.d_reg = la::Mat(n, m);

  const double e_val = std::sqrt(std::max(sol.objective, 0.0));
  la::Vec z(n), kz(n), jv(n);
  for (int t = 0; t < m; ++t) {
    const la::Mat& K = grams.arm(t).K;
    const double g2 = cfg.gamma_for(t) * cfg.gamma_for(t);

    // gradient of tau via J_t: (v^T J_t)_j = -2 g2 sum_{i: T_i=t} K(i,j) v_i
    std::fill(jv.begin(), jv.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (T[i] == t) simd::axpy(n, v[i], K.row(i), jv.data());
    for (std::size_t j = 0; j < n; ++j) {
      double gj = -2.0 * g2 * jv[j] / n_real;
      if (mu_hat) gj += (*mu_hat)(j, static_cast<std::size_t>(t)) / n_real;
      out.d_tau(j, static_cast<std::size_t>(t)) = gj;
    }

    // gradient of E: -D_t / E with D_ti = g2 (K z_t)_i
    if (e_val > 1e-12) {
      for (std::size_t i = 0; i < n; ++i)
        z[i] = (T[i] == t ? sol.W[i] : 0.0) - P.P(i, static_cast<std::size_t>(t));
      la::matvec(K, z.data(), kz.data());
      for (std::size_t i = 0; i < n; ++i)
        out.d_reg(i, static_cast<std::size_t>(t)) = -g2 * kz[i] / e_val;
    }
  }
  return out;
}

la::Mat chain_to_beta(const la::Mat& grad_P, const PolicyAssignment& P, const la::Mat& X) {
  const std::size_t n = X.rows(), d = X.cols();
  const int m = P.m();
  la::Mat g(m, d + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* pi = P.P.row(i);
    const double* gp = grad_P.row(i);
    // inner = sum_t gp_t pi_t, then d/dbeta_s = pi_s (gp_s - inner) (1, x)
    double inner = 0.0;
    for (int t = 0; t < m; ++t) inner += gp[t] * pi[t];
    for (int s = 0; s < m; ++s) {
      const double coef = pi[s] * (gp[s] - inner);
      g(s, 0) += coef;
      simd::axpy(d, coef, X.row(i), g.row(s) + 1);
    }
  }
  return g;
}

namespace {

struct RestartOutcome {
  la::Mat beta;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<IterRecord> trace;
  bool ok = false;
};

// One seeded BFGS run of the bilevel objective.
RestartOutcome run_balanced_restart(const LoggedDataset& ds, const BalanceConfig& cfg,
                                    const LearnerConfig& lcfg, const GramSet& grams,
                                    const ImplicitGradContext& ctx, const la::Mat* mu_hat,
                                    int restart_id) {
  const std::size_t n = ds.n();
  const std::size_t d = ds.dim();
  const int m = ds.m;
  const std::size_t p = static_cast<std::size_t>(m) * (d + 1);

  Rng rng(Rng::derive(lcfg.seed, 0x62616c + static_cast<std::uint64_t>(restart_id)));
  la::Vec b0(p);
  for (double& v : b0) v = rng.normal(0.0, lcfg.init_scale);

  la::Vec resid = ds.Y;
  if (mu_hat)
    for (std::size_t i = 0; i < n; ++i)
      resid[i] -= (*mu_hat)(i, static_cast<std::size_t>(ds.T[i]));

  QpForm qp;
  qp.Q = ctx.Q;
  la::Vec warm(n, 1.0);
  RestartOutcome out;
  int active_size = 0;

  auto fg = [&](const la::Vec& bv, la::Vec& grad) -> double {
    la::Mat beta(m, d + 1);
    std::copy(bv.begin(), bv.end(), beta.data());
    const PolicyAssignment P = softmax_assignment(beta, ds.X);
    assemble_qp_linear(qp, P, ds.T, cfg, grams);
    SolveOptions so;
    so.warm_start = &warm;
    WeightsSolution sol = solve_weights_qp(qp, P, ds.T, cfg, grams, so);
    warm = sol.W;
    active_size = 0;
    for (bool a : sol.active_set) active_size += a;

    double obj = mu_hat ? tau_dr(sol.W, P, *mu_hat, ds) : tau_weighted(sol.W, ds.Y);
    const double e_val = std::sqrt(std::max(sol.objective, 0.0));
    obj += lcfg.lambda_reg * e_val;

    const PolicyGradients pg = thm5_gradients(sol, resid, P, ds.T, cfg, grams, ctx, mu_hat);
    la::Mat grad_P = pg.d_tau;
    if (lcfg.lambda_reg != 0.0)
      for (std::size_t i = 0; i < n; ++i)
        for (int t = 0; t < m; ++t)
          grad_P(i, static_cast<std::size_t>(t)) +=
              lcfg.lambda_reg * pg.d_reg(i, static_cast<std::size_t>(t));
    const la::Mat gb = chain_to_beta(grad_P, P, ds.X);
    grad.assign(p, 0.0);
    std::copy(gb.data(), gb.data() + p, grad.data());
    return obj;
  };

  BfgsOptions bo;
  bo.max_iters = lcfg.max_iters;
  bo.grad_tol = lcfg.grad_tol;
  try {
    BfgsResult res = bfgs_minimize(fg, std::move(b0), bo, [&](int it, double f, double gn) {
      out.trace.push_back({restart_id, it, f, gn, active_size});
    });
    if (!std::isfinite(res.f)) return out;
    out.beta = la::Mat(m, d + 1);
    std::copy(res.x.begin(), res.x.end(), out.beta.data());
    out.objective = res.f;
    out.ok = true;
  } catch (const std::exception&) {
    // a failed restart (QP non-convergence, singular gradient system) is
    // dropped; merge_restarts errors only if every restart failed
    out.ok = false;
  }
  return out;
}

LearnResult merge_restarts(std::vector<RestartOutcome> runs) {
  LearnResult lr;
  int best = -1;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& rec : runs[r].trace) lr.trace.push_back(rec);
    if (runs[r].ok && (best < 0 || runs[r].objective < lr.objective)) {
      best = static_cast<int>(r);
      lr.objective = runs[r].objective;
    }
  }
  if (best < 0)
    throw std::runtime_error("all learner restarts failed to produce a finite objective");
  lr.beta = std::move(runs[best].beta);
  lr.best_restart = best;
  return lr;
}

template <typename RunFn>
std::vector<RestartOutcome> run_restarts(int restarts, int threads, RunFn&& run_one) {
  std::vector<RestartOutcome> runs(restarts);
  int hw = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  hw = std::max(1, std::min(hw, restarts));
  if (hw == 1) {
    for (int r = 0; r < restarts; ++r) runs[r] = run_one(r);
    return runs;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < hw; ++w)
    pool.emplace_back([&] {
      for (int r = next.fetch_add(1); r < restarts; r = next.fetch_add(1))
        runs[r] = run_one(r);
    });
  for (auto& th : pool) th.join();
  return runs;
}

LearnResult learn_balanced_impl(const LoggedDataset& ds, const BalanceConfig& cfg,
                                const LearnerConfig& lcfg, const la::Mat* mu_hat) {
  if (lcfg.restarts < 1) throw std::invalid_argument("restarts must be >= 1");
  cfg.validate(ds.m);
  const GramSet grams = compute_gram_set(cfg.kernels, ds.m, ds.X);
  const ImplicitGradContext ctx = make_implicit_context(ds.T, cfg, grams, ds.n());
  auto runs = run_restarts(lcfg.restarts, lcfg.threads, [&](int r) {
    return run_balanced_restart(ds, cfg, lcfg, grams, ctx, mu_hat, r);
  });
  return merge_restarts(std::move(runs));
}

// Smooth logit objective for the IPW / DR baselines. Both are linear in
// the assignment probabilities, so the gradient is immediate.
LearnResult learn_logit_baseline(const LoggedDataset& ds, const la::Mat& phi_hat,
                                 const la::Mat* mu_hat, const LearnerConfig& lcfg) {
  if (lcfg.restarts < 1) throw std::invalid_argument("restarts must be >= 1");
  const std::size_t n = ds.n(), d = ds.dim();
  const int m = ds.m;
  const std::size_t p = static_cast<std::size_t>(m) * (d + 1);

  // grad_P is constant: d tau / d pi_t(X_i)
  la::Mat gp(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ti = static_cast<std::size_t>(ds.T[i]);
    const double phi = phi_hat(i, ti);
    if (!(phi > 0.0))
      throw std::invalid_argument("zero propensity on observed arm at row " +
                                  std::to_string(i));
    const double resid = mu_hat ? ds.Y[i] - (*mu_hat)(i, ti) : ds.Y[i];
    if (mu_hat)
      for (int t = 0; t < m; ++t)
        gp(i, static_cast<std::size_t>(t)) = (*mu_hat)(i, static_cast<std::size_t>(t)) / n;
    gp(i, ti) += resid / phi / static_cast<double>(n);
  }

  auto run_one = [&](int restart_id) {
    Rng rng(Rng::derive(lcfg.seed, 0x697077 + static_cast<std::uint64_t>(restart_id)));
    la::Vec b0(p);
    for (double& v : b0) v = rng.normal(0.0, lcfg.init_scale);
    RestartOutcome out;
    auto fg = [&](const la::Vec& bv, la::Vec& grad) -> double {
      la::Mat beta(m, d + 1);
      std::copy(bv.begin(), bv.end(), beta.data());
      const PolicyAssignment P = softmax_assignment(beta, ds.X);
      double obj = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        obj += simd::dot(gp.row(i), P.P.row(i), m);
      const la::Mat gb = chain_to_beta(gp, P, ds.X);
      grad.assign(p, 0.0);
      std::copy(gb.data(), gb.data() + p, grad.data());
      return obj;
    };
    BfgsOptions bo;
    bo.max_iters = lcfg.max_iters;
    bo.grad_tol = lcfg.grad_tol;
    BfgsResult res = bfgs_minimize(fg, std::move(b0), bo, [&](int it, double f, double gn) {
      out.trace.push_back({restart_id, it, f, gn, 0});
    });
    if (std::isfinite(res.f)) {
      out.beta = la::Mat(m, d + 1);
      std::copy(res.x.begin(), res.x.end(), out.beta.data());
      out.objective = res.f;
      out.ok = true;
    }
    return out;
  };

  auto runs = run_restarts(lcfg.restarts, lcfg.threads, run_one);
  return merge_restarts(std::move(runs));
}

}  // namespace

LearnResult learn_balanced(const LoggedDataset& ds, const BalanceConfig& cfg,
                           const LearnerConfig& lcfg) {
  return learn_balanced_impl(ds, cfg, lcfg, nullptr);
}

LearnResult learn_balanced_dr(const LoggedDataset& ds, const BalanceConfig& cfg,
                              const LearnerConfig& lcfg, const la::Mat& mu_hat) {
  return learn_balanced_impl(ds, cfg, lcfg, &mu_hat);
}

LearnResult learn_ipw_logit(const LoggedDataset& ds, const la::Mat& phi_hat,
                            const LearnerConfig& lcfg) {
  return learn_logit_baseline(ds, phi_hat, nullptr, lcfg);
}

LearnResult learn_dr_logit(const LoggedDataset& ds, const la::Mat& phi_hat,
                           const la::Mat& mu_hat, const LearnerConfig& lcfg) {
  return learn_logit_baseline(ds, phi_hat, &mu_hat, lcfg);
}

}  // namespace balpol
