#include "balpol/kernel.hpp"

#include <cmath>
#include <stdexcept>

#include "balpol/simd.hpp"

namespace balpol {

la::Mat sample_covariance(const la::Mat& X) {
  const std::size_t n = X.rows(), d = X.cols();
  if (n < 2) throw std::invalid_argument("covariance undefined for n < 2");
  la::Vec mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) simd::axpy(d, 1.0, X.row(i), mean.data());
  for (double& v : mean) v /= static_cast<double>(n);
  la::Mat s(d, d);
  la::Vec dev(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) dev[j] = X(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a) simd::axpy(d, dev[a], dev.data(), s.row(a));
  }
  const double denom = static_cast<double>(n - 1);
  double tr = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) s(a, b) /= denom;
    tr += s(a, a);
  }
  double eps = 1e-8 * tr / static_cast<double>(d);
  if (!(eps > 0.0)) eps = 1e-8;
  for (std::size_t a = 0; a < d; ++a) s(a, a) += eps;
  return s;
}

namespace {

// invert a lower-triangular matrix in place
la::Mat invert_lower(const la::Mat& l) {
  const std::size_t d = l.rows();
  la::Mat inv(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    inv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = 0.0;
      for (std::size_t k = j; k < i; ++k) s += l(i, k) * inv(k, j);
      inv(i, j) = -s / l(i, i);
    }
  }
  return inv;
}

}  // namespace

void ResolvedKernel::whiten_point(const double* x, double* z) const {
  const std::size_t d = whiten.rows();
  for (std::size_t i = 0; i < d; ++i) z[i] = simd::dot(whiten.row(i), x, i + 1);
}

la::Mat ResolvedKernel::whiten_all(const la::Mat& X) const {
  la::Mat z(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) whiten_point(X.row(i), z.row(i));
  return z;
}

ResolvedKernel resolve_kernel(const KernelSpec& spec, const la::Mat& X) {
  if (!(spec.bandwidth > 0.0))
    throw std::invalid_argument("kernel bandwidth must be positive");
  la::Mat s = spec.scale ? *spec.scale : sample_covariance(X);
  if (s.rows() != s.cols() || (X.cols() > 0 && s.rows() != X.cols()))
    throw std::invalid_argument("kernel scale matrix dimension mismatch");
  la::Mat l = s;
  if (!la::cholesky_inplace(l)) {
    auto retry = la::cholesky_with_ridge(s, 1e-8);
    if (!retry) throw std::invalid_argument("kernel scale matrix is not positive definite");
    l = *retry;
  }
  ResolvedKernel rk;
  rk.whiten = invert_lower(l);
  rk.s2 = spec.bandwidth * spec.bandwidth;
  return rk;
}

double kernel_eval(const ResolvedKernel& rk, const double* x, const double* y,
                   std::size_t d) {
  if (d != rk.whiten.rows()) throw std::invalid_argument("kernel_eval dimension mismatch");
  la::Vec zx(d), zy(d);
  rk.whiten_point(x, zx.data());
  rk.whiten_point(y, zy.data());
  return std::exp(-simd::sqdist(zx.data(), zy.data(), d) / rk.s2);
}

double kernel_eval(const KernelSpec& spec, const la::Vec& x, const la::Vec& y) {
  if (!spec.scale) throw std::invalid_argument("kernel_eval needs an explicit scale matrix");
  if (x.size() != y.size()) throw std::invalid_argument("kernel_eval dimension mismatch");
  la::Mat dummy(0, x.size());
  ResolvedKernel rk = resolve_kernel(spec, dummy);
  return kernel_eval(rk, x.data(), y.data(), x.size());
}

GramMatrix gram_matrix(const ResolvedKernel& rk, const la::Mat& X) {
  const std::size_t n = X.rows(), d = X.cols();
  const la::Mat z = rk.whiten_all(X);
  GramMatrix g{la::Mat(n, n)};
  const double inv_s2 = 1.0 / rk.s2;
  for (std::size_t i = 0; i < n; ++i) {
    g.K(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::exp(-simd::sqdist(z.row(i), z.row(j), d) * inv_s2);
      g.K(i, j) = v;
      g.K(j, i) = v;  // mirror, exact symmetry
    }
  }
  return g;
}

GramMatrix gram_matrix(const KernelSpec& spec, const la::Mat& X) {
  return gram_matrix(resolve_kernel(spec, X), X);
}

GramSet compute_gram_set(const std::vector<KernelSpec>& specs, int m, const la::Mat& X) {
  if (specs.empty()) throw std::invalid_argument("no kernel specs given");
  if (specs.size() != 1 && specs.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("kernel spec list must have 1 or m entries");
  GramSet gs;
  gs.per_arm.resize(m);
  if (specs.size() == 1) {
    auto shared = std::make_shared<const GramMatrix>(gram_matrix(specs[0], X));
    for (int t = 0; t < m; ++t) gs.per_arm[t] = shared;
    return gs;
  }
  for (int t = 0; t < m; ++t)
    gs.per_arm[t] = std::make_shared<const GramMatrix>(gram_matrix(specs[t], X));
  return gs;
}

}  // namespace balpol
