#include "balpol/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "balpol/bfgs.hpp"
#include "balpol/rng.hpp"
#include "balpol/simd.hpp"

namespace balpol {

namespace {

constexpr double kProbFloor = 1e-12;

void floor_and_normalize(double* p, int m) {
  double s = 0.0;
  for (int t = 0; t < m; ++t) {
    p[t] = std::max(p[t], kProbFloor);
    s += p[t];
  }
  for (int t = 0; t < m; ++t) p[t] /= s;
}

}  // namespace

void PropensityModel::predict(const double* x, double* out) const {
  switch (kind_) {
    case Kind::multinomial_logit: {
      const std::size_t d = beta_.cols() - 1;
      double mx = -1e300;
      for (int t = 0; t < m_; ++t) {
        out[t] = beta_(t, 0) + simd::dot(beta_.row(t) + 1, x, d);
        mx = std::max(mx, out[t]);
      }
      double s = 0.0;
      for (int t = 0; t < m_; ++t) {
        out[t] = std::exp(out[t] - mx);
        s += out[t];
      }
      for (int t = 0; t < m_; ++t) out[t] /= s;
      break;
    }
    case Kind::gaussian_discriminant: {
      const std::size_t d = means_[0].size();
      la::Vec dev(d);
      double mx = -1e300;
      for (int t = 0; t < m_; ++t) {
        for (std::size_t j = 0; j < d; ++j) dev[j] = x[j] - means_[t][j];
        // solve L z = dev; quadratic form is |z|^2
        const la::Mat& L = cov_chol_[t];
        for (std::size_t i = 0; i < d; ++i)
          dev[i] = (dev[i] - simd::dot(L.row(i), dev.data(), i)) / L(i, i);
        out[t] = log_prior_[t] + log_norm_[t] -
                 0.5 * simd::dot(dev.data(), dev.data(), d);
        mx = std::max(mx, out[t]);
      }
      double s = 0.0;
      for (int t = 0; t < m_; ++t) {
        out[t] = std::exp(out[t] - mx);
        s += out[t];
      }
      for (int t = 0; t < m_; ++t) out[t] /= s;
      break;
    }
    case Kind::known:
      throw std::logic_error("known-propensity model predicts by row, not by point");
  }
  floor_and_normalize(out, m_);
}

void PropensityModel::predict_row(std::size_t i, double* out) const {
  if (kind_ != Kind::known) throw std::logic_error("predict_row needs a known model");
  for (int t = 0; t < m_; ++t) out[t] = known_(i, static_cast<std::size_t>(t));
  floor_and_normalize(out, m_);
}

la::Mat PropensityModel::predict_all(const la::Mat& X) const {
  la::Mat out(X.rows(), m_);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    if (kind_ == Kind::known) predict_row(i, out.row(i));
    else predict(X.row(i), out.row(i));
  }
  return out;
}

PropensityModel PropensityModel::known(la::Mat phi) {
  PropensityModel pm;
  pm.kind_ = Kind::known;
  pm.m_ = static_cast<int>(phi.cols());
  pm.known_ = std::move(phi);
  return pm;
}

PropensityModel fit_multinomial_logit(const la::Mat& X, const std::vector<int>& T, int m) {
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<int> counts(m, 0);
  for (int t : T) ++counts[t];
  for (int t = 0; t < m; ++t)
    if (counts[t] == 0)
      throw std::invalid_argument("arm " + std::to_string(t + 1) +
                                  " has no observations; cannot fit propensities");
  constexpr double kPenalty = 1e-4;
  const std::size_t p = static_cast<std::size_t>(m) * (d + 1);

  auto fg = [&](const la::Vec& b, la::Vec& grad) {
    grad.assign(p, 0.0);
    double nll = 0.0;
    la::Vec logits(m), probs(m);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int t = 0; t < m; ++t) {
        const double* bt = b.data() + static_cast<std::size_t>(t) * (d + 1);
        logits[t] = bt[0] + simd::dot(bt + 1, X.row(i), d);
        mx = std::max(mx, logits[t]);
      }
      double s = 0.0;
      for (int t = 0; t < m; ++t) {
        probs[t] = std::exp(logits[t] - mx);
        s += probs[t];
      }
      nll -= logits[T[i]] - mx - std::log(s);
      for (int t = 0; t < m; ++t) {
        const double e = probs[t] / s - (t == T[i] ? 1.0 : 0.0);
        double* gt = grad.data() + static_cast<std::size_t>(t) * (d + 1);
        gt[0] += e;
        simd::axpy(d, e, X.row(i), gt + 1);
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      nll += 0.5 * kPenalty * b[j] * b[j];
      grad[j] += kPenalty * b[j];
    }
    return nll;
  };

  BfgsOptions opts;
  opts.max_iters = 500;
  opts.grad_tol = 1e-6;
  BfgsResult res = bfgs_minimize(fg, la::Vec(p, 0.0), opts);

  PropensityModel pm;
  pm.kind_ = PropensityModel::Kind::multinomial_logit;
  pm.m_ = m;
  pm.beta_ = la::Mat(m, d + 1);
  std::copy(res.x.begin(), res.x.end(), pm.beta_.data());
  return pm;
}

PropensityModel fit_gaussian_discriminant(const la::Mat& X, const std::vector<int>& T,
                                          int m) {
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<int> counts(m, 0);
  for (int t : T) ++counts[t];
  for (int t = 0; t < m; ++t)
    if (counts[t] < static_cast<int>(d) + 1)
      throw std::invalid_argument("arm " + std::to_string(t + 1) + " has only " +
                                  std::to_string(counts[t]) +
                                  " observations; need at least d+1 to fit a Gaussian");
  PropensityModel pm;
  pm.kind_ = PropensityModel::Kind::gaussian_discriminant;
  pm.m_ = m;
  pm.means_.assign(m, la::Vec(d, 0.0));
  pm.cov_chol_.resize(m);
  pm.log_prior_.resize(m);
  pm.log_norm_.resize(m);
  for (std::size_t i = 0; i < n; ++i) simd::axpy(d, 1.0, X.row(i), pm.means_[T[i]].data());
  for (int t = 0; t < m; ++t)
    for (double& v : pm.means_[t]) v /= counts[t];

  la::Vec dev(d);
  for (int t = 0; t < m; ++t) {
    la::Mat cov(d, d);
    for (std::size_t i = 0; i < n; ++i) {
      if (T[i] != t) continue;
      for (std::size_t j = 0; j < d; ++j) dev[j] = X(i, j) - pm.means_[t][j];
      for (std::size_t a = 0; a < d; ++a) simd::axpy(d, dev[a], dev.data(), cov.row(a));
    }
    double tr = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov(a, b) /= (counts[t] - 1);
      tr += cov(a, a);
    }
    double eps = 1e-8 * tr / static_cast<double>(d);
    if (!(eps > 0.0)) eps = 1e-8;
    for (std::size_t a = 0; a < d; ++a) cov(a, a) += eps;
    if (!la::cholesky_inplace(cov))
      throw std::runtime_error("arm covariance not positive definite");
    pm.log_norm_[t] = -0.5 * la::chol_logdet(cov);  // drop the shared (2pi)^{-d/2}
    pm.cov_chol_[t] = std::move(cov);
    pm.log_prior_[t] = std::log(static_cast<double>(counts[t]) / static_cast<double>(n));
  }
  return pm;
}

void RegressionModel::predict(const double* x, double* out_m) const {
  const std::size_t d = rk_.whiten.rows();
  la::Vec z(d);
  rk_.whiten_point(x, z.data());
  const double inv_s2 = 1.0 / rk_.s2;
  for (int t = 0; t < arms(); ++t) {
    const la::Mat& zt = arm_z_[t];
    double acc = intercept_[t];
    for (std::size_t j = 0; j < zt.rows(); ++j)
      acc += alpha_[t][j] * std::exp(-simd::sqdist(z.data(), zt.row(j), d) * inv_s2);
    out_m[t] = acc;
  }
}

la::Mat RegressionModel::predict_all(const la::Mat& X) const {
  la::Mat out(X.rows(), arms());
  for (std::size_t i = 0; i < X.rows(); ++i) predict(X.row(i), out.row(i));
  return out;
}

RegressionModel fit_kernel_ridge_per_arm(const LoggedDataset& ds, const KernelSpec& kernel,
                                         double ridge) {
  const int m = ds.m;
  std::vector<int> counts(m, 0);
  for (int t : ds.T) ++counts[t];
  for (int t = 0; t < m; ++t)
    if (counts[t] == 0)
      throw std::invalid_argument("arm " + std::to_string(t + 1) +
                                  " has no observations; cannot fit outcome model");
  RegressionModel rm;
  rm.rk_ = resolve_kernel(kernel, ds.X);
  const la::Mat z = rm.rk_.whiten_all(ds.X);
  rm.arm_z_.resize(m);
  rm.alpha_.resize(m);
  rm.intercept_.assign(m, 0.0);
  const double inv_s2 = 1.0 / rm.rk_.s2;
  for (int t = 0; t < m; ++t) {
    const std::size_t nt = counts[t];
    la::Mat zt(nt, ds.dim());
    la::Vec yt(nt);
    std::size_t r = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.T[i] != t) continue;
      std::copy(z.row(i), z.row(i) + ds.dim(), zt.row(r));
      yt[r] = ds.Y[i];
      ++r;
    }
    // center on the arm mean so constants are fit exactly; the kernel part
    // models the residual
    const double ybar = simd::sum(yt.data(), nt) / static_cast<double>(nt);
    for (double& y : yt) y -= ybar;
    rm.intercept_[t] = ybar;
    la::Mat K(nt, nt);
    for (std::size_t a = 0; a < nt; ++a) {
      K(a, a) = 1.0 + ridge;
      for (std::size_t b = a + 1; b < nt; ++b) {
        const double v = std::exp(-simd::sqdist(zt.row(a), zt.row(b), ds.dim()) * inv_s2);
        K(a, b) = v;
        K(b, a) = v;
      }
    }
    auto chol = la::cholesky_with_ridge(std::move(K), 1e-10);
    if (!chol) throw std::runtime_error("kernel ridge system not positive definite");
    la::chol_solve(*chol, yt.data());
    rm.alpha_[t] = std::move(yt);
    rm.arm_z_[t] = std::move(zt);
  }
  return rm;
}

CrossfitResult crossfit(const LoggedDataset& ds, const KernelSpec& kernel, double ridge,
                        int folds, std::uint64_t seed) {
  const std::size_t n = ds.n();
  const int m = ds.m;
  if (folds < 2) throw std::invalid_argument("crossfit needs at least 2 folds");
  if (n < static_cast<std::size_t>(folds))
    throw std::invalid_argument("crossfit needs n >= folds");

  // seeded permutation partition into folds of near-equal size
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(Rng::derive(seed, 0x666f6c64));  // "fold"
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  std::vector<int> fold_of(n);
  for (std::size_t r = 0; r < n; ++r) fold_of[perm[r]] = static_cast<int>(r % folds);

  CrossfitResult out;
  out.mu_hat = la::Mat(n, m);
  for (int k = 0; k < folds; ++k) {
    LoggedDataset train;
    train.m = m;
    std::vector<std::size_t> test_rows;
    std::size_t ntr = 0;
    for (std::size_t i = 0; i < n; ++i) ntr += fold_of[i] != k;
    train.X = la::Mat(ntr, ds.dim());
    train.Y.reserve(ntr);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (fold_of[i] == k) {
        test_rows.push_back(i);
        continue;
      }
      std::copy(ds.X.row(i), ds.X.row(i) + ds.dim(), train.X.row(r));
      train.T.push_back(ds.T[i]);
      train.Y.push_back(ds.Y[i]);
      ++r;
    }
    std::vector<int> counts(m, 0);
    for (int t : train.T) ++counts[t];
    const bool all_arms = std::all_of(counts.begin(), counts.end(),
                                      [](int c) { return c > 0; });
    if (all_arms) {
      const RegressionModel rm = fit_kernel_ridge_per_arm(train, kernel, ridge);
      for (std::size_t i : test_rows) rm.predict(ds.X.row(i), out.mu_hat.row(i));
    } else {
      // pooled mean over the training complement; no held-out Y leaks in
      const double pooled = simd::sum(train.Y.data(), train.Y.size()) /
                            static_cast<double>(train.Y.size());
      out.fallback_used = true;
      out.fallback_folds.push_back(k);
      LoggedDataset sub = train;  // arms that do exist still get a real fit
      const RegressionModel* rm = nullptr;
      RegressionModel fitted;
      std::vector<int> remap(m, -1);
      {
        // fit on observed arms only by compacting labels
        int next = 0;
        for (int t = 0; t < m; ++t)
          if (counts[t] > 0) remap[t] = next++;
        for (auto& t : sub.T) t = remap[t];
        sub.m = next;
        fitted = fit_kernel_ridge_per_arm(sub, kernel, ridge);
        rm = &fitted;
      }
      la::Vec tmp(sub.m);
      for (std::size_t i : test_rows) {
        rm->predict(ds.X.row(i), tmp.data());
        for (int t = 0; t < m; ++t)
          out.mu_hat(i, static_cast<std::size_t>(t)) =
              remap[t] >= 0 ? tmp[remap[t]] : pooled;
      }
    }
  }
  return out;
}

double gp_log_marginal_likelihood(const la::Mat& Xt, const la::Vec& Yt,
                                  const ResolvedKernel& rk, double gamma,
                                  double noise_var) {
  if (!(noise_var > 0.0)) throw std::invalid_argument("noise_var must be positive");
  const std::size_t n = Yt.size();
  const GramMatrix g = gram_matrix(rk, Xt);
  la::Mat V = g.K;
  const double g2 = gamma * gamma;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) V(i, j) *= g2;
    V(i, i) += noise_var;
  }
  auto chol = la::cholesky_with_ridge(std::move(V), 1e-10);
  if (!chol) throw std::runtime_error("GP covariance not positive definite");
  la::Vec vy = la::chol_solve(*chol, Yt);
  la::Vec v1 = la::chol_solve(*chol, la::Vec(n, 1.0));
  const double s1 = simd::sum(v1.data(), n);
  const double c_hat = s1 > 0.0 ? simd::sum(vy.data(), n) / s1 : 0.0;
  la::Vec r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = Yt[i] - c_hat;
  la::Vec vr = la::chol_solve(*chol, r);
  const double quad = simd::dot(r.data(), vr.data(), n);
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  return -0.5 * quad - 0.5 * la::chol_logdet(*chol) -
         0.5 * static_cast<double>(n) * kLog2Pi;
}

double gp_log_marginal_likelihood(const la::Mat& Xt, const la::Vec& Yt,
                                  const KernelSpec& kernel, double gamma,
                                  double noise_var) {
  return gp_log_marginal_likelihood(Xt, Yt, resolve_kernel(kernel, Xt), gamma, noise_var);
}

TuneResult tune_hyperparameters(const LoggedDataset& ds, const TuneGrid& grid) {
  if (grid.bandwidths.empty() || grid.gammas.empty() || grid.noises.empty())
    throw std::invalid_argument("tune grid must be non-empty");
  const int m = ds.m;
  std::vector<la::Mat> arm_x(m);
  std::vector<la::Vec> arm_y(m);
  {
    std::vector<int> counts(m, 0);
    for (int t : ds.T) ++counts[t];
    for (int t = 0; t < m; ++t) arm_x[t] = la::Mat(counts[t], ds.dim());
    std::vector<int> r(m, 0);
    for (std::size_t i = 0; i < ds.n(); ++i) {
      const int t = ds.T[i];
      std::copy(ds.X.row(i), ds.X.row(i) + ds.dim(), arm_x[t].row(r[t]));
      arm_y[t].push_back(ds.Y[i]);
      ++r[t];
    }
  }

  TuneResult best;
  bool first = true;
  for (double s : grid.bandwidths) {
    KernelSpec spec;
    spec.bandwidth = s;
    const ResolvedKernel rk = resolve_kernel(spec, ds.X);
    for (double gamma : grid.gammas) {
      for (double noise : grid.noises) {
        double score = 0.0;
        for (int t = 0; t < m; ++t)
          score += gp_log_marginal_likelihood(arm_x[t], arm_y[t], rk, gamma, noise);
        const bool better =
            first || score > best.score + 1e-12 ||
            (std::fabs(score - best.score) <= 1e-12 &&
             (s < best.bandwidth || (s == best.bandwidth && gamma < best.gamma)));
        if (better) {
          best = {s, gamma, noise, score};
          first = false;
        }
      }
    }
  }
  return best;
}

void apply_tune(BalanceConfig& cfg, const TuneResult& tuned) {
  for (KernelSpec& spec : cfg.kernels) spec.bandwidth = tuned.bandwidth;
  cfg.gamma.assign(1, tuned.gamma);
}

}  // namespace balpol
