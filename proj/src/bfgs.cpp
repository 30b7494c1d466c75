#include "balpol/bfgs.hpp"

#include <cmath>

#include "balpol/simd.hpp"

namespace balpol {

namespace {

double norm2(const la::Vec& v) { return std::sqrt(simd::dot(v.data(), v.data(), v.size())); }

}  // namespace

BfgsResult bfgs_minimize(const ObjectiveFn& fg, la::Vec x0, const BfgsOptions& opts,
                         const IterHook& hook) {
  const std::size_t n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  la::Vec g(n), g_new(n), d(n), x_new(n), s(n), y(n), hy(n);
  res.f = fg(res.x, g);
  res.grad_norm = norm2(g);

  la::Mat Hinv = la::Mat::identity(n);  // inverse Hessian approximation
  constexpr double c1 = 1e-4, c2 = 0.9;
  int stalled = 0;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    if (!std::isfinite(res.f)) break;
    if (res.grad_norm <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    la::matvec(Hinv, g.data(), d.data());
    for (double& v : d) v = -v;
    double dg = simd::dot(d.data(), g.data(), n);
    if (!(dg < 0.0)) {
      // reset to steepest descent if the model lost positive definiteness
      Hinv = la::Mat::identity(n);
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      dg = -simd::dot(g.data(), g.data(), n);
      if (!(dg < 0.0)) break;
    }

    // Wolfe line search: bracket by doubling, then bisect/interpolate.
    double alpha = 1.0, lo = 0.0, hi = 0.0;
    double f_lo = res.f, dg_lo = dg;
    bool have_hi = false, accepted = false;
    double f_new = res.f, dg_new = 0.0;
    for (int ev = 0; ev < opts.max_ls_evals; ++ev) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + alpha * d[i];
      f_new = fg(x_new, g_new);
      dg_new = simd::dot(g_new.data(), d.data(), n);
      const bool armijo = std::isfinite(f_new) && f_new <= res.f + c1 * alpha * dg;
      if (!armijo) {
        hi = alpha;
        have_hi = true;
      } else if (std::fabs(dg_new) <= -c2 * dg) {
        accepted = true;
        break;
      } else if (dg_new > 0.0) {
        hi = alpha;
        have_hi = true;
        // the minimum is bracketed between lo and alpha
      } else {
        lo = alpha;
        f_lo = f_new;
        dg_lo = dg_new;
      }
      if (have_hi) {
        alpha = 0.5 * (lo + hi);
        if (hi - lo < 1e-14) break;
      } else {
        alpha *= 2.0;
        if (alpha > 1e6) break;
      }
    }
    (void)f_lo;
    (void)dg_lo;
    if (!accepted) {
      // fall back to the best Armijo point seen; otherwise stop
      if (!(std::isfinite(f_new) && f_new < res.f)) {
        bool found = false;
        alpha = have_hi ? 0.5 * hi : 1.0;
        for (int bt = 0; bt < opts.max_ls_evals && !found; ++bt) {
          for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + alpha * d[i];
          f_new = fg(x_new, g_new);
          if (std::isfinite(f_new) && f_new <= res.f + c1 * alpha * dg) found = true;
          else alpha *= 0.5;
        }
        if (!found) break;
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - res.x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = simd::dot(s.data(), y.data(), n);
    const double decrease = res.f - f_new;
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    res.grad_norm = norm2(g);
    res.iters = iter + 1;
    if (hook) hook(res.iters, res.f, res.grad_norm);
    // stop once progress is below double precision for a couple of steps
    if (decrease <= 1e-14 * (1.0 + std::fabs(res.f))) {
      if (++stalled >= 2) break;
    } else {
      stalled = 0;
    }

    if (sy > 1e-12 * norm2(s) * norm2(y) && sy > 0.0) {
      // BFGS inverse update: H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      la::matvec(Hinv, y.data(), hy.data());
      const double yhy = simd::dot(y.data(), hy.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          Hinv(i, j) += rho * rho * (sy + yhy) * s[i] * s[j] -
                        rho * (hy[i] * s[j] + s[i] * hy[j]);
    }
  }

  if (res.grad_norm <= opts.grad_tol) res.converged = true;
  return res;
}

}  // namespace balpol
