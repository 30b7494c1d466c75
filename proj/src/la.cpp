#include "balpol/la.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "balpol/simd.hpp"

namespace balpol::la {

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

void matvec(const Mat& a, const double* x, double* y) {
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = simd::dot(a.row(i), x, a.cols());
}

Vec matvec(const Mat& a, const Vec& x) {
  Vec y(a.rows());
  matvec(a, x.data(), y.data());
  return y;
}

void matvec_t(const Mat& a, const double* x, double* y) {
  std::memset(y, 0, a.cols() * sizeof(double));
  for (std::size_t i = 0; i < a.rows(); ++i) simd::axpy(a.cols(), x[i], a.row(i), y);
}

double quadform(const Mat& a, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) acc += x[i] * simd::dot(a.row(i), y, a.cols());
  return acc;
}

bool cholesky_inplace(Mat& a) {
  const std::size_t n = a.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j) - simd::dot(a.row(j), a.row(j), j);
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a(j, j) = d;
    const double inv = 1.0 / d;
    for (std::size_t i = j + 1; i < n; ++i)
      a(i, j) = (a(i, j) - simd::dot(a.row(i), a.row(j), j)) * inv;
  }
  // zero the strict upper triangle so the factor is self-contained
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
  return true;
}

void chol_solve(const Mat& l, double* b) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i)
    b[i] = (b[i] - simd::dot(l.row(i), b, i)) / l(i, i);
  for (std::size_t k = n; k-- > 0;) {
    b[k] /= l(k, k);
    // subtract column k of L from the remaining rhs entries
    for (std::size_t i = 0; i < k; ++i) b[i] -= l(k, i) * b[k];
  }
}

Vec chol_solve(const Mat& l, Vec b) {
  chol_solve(l, b.data());
  return b;
}

double chol_logdet(const Mat& l) {
  double acc = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

std::optional<Mat> cholesky_with_ridge(Mat a, double rel) {
  Mat work = a;
  if (cholesky_inplace(work)) return work;
  const std::size_t n = a.rows();
  double tr = 0.0;
  for (std::size_t i = 0; i < n; ++i) tr += a(i, i);
  double ridge = rel * tr / static_cast<double>(n);
  if (!(ridge > 0.0)) ridge = rel;
  for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
  if (cholesky_inplace(a)) return a;
  return std::nullopt;
}

Lu lu_factor(Mat a) {
  const std::size_t n = a.rows();
  Lu f;
  f.piv.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.piv[i] = static_cast<int>(i);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::fabs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::fabs(a(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best == 0.0) {
      f.a = std::move(a);
      f.ok = false;
      return f;
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      std::swap(f.piv[k], f.piv[p]);
    }
    const double inv = 1.0 / a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = a(i, k) * inv;
      a(i, k) = m;
      if (m != 0.0) simd::axpy(n - k - 1, -m, a.row(k) + k + 1, a.row(i) + k + 1);
    }
  }
  f.a = std::move(a);
  f.ok = true;
  return f;
}

void lu_solve(const Lu& f, double* b) {
  if (!f.ok) throw std::runtime_error("lu_solve on singular factorization");
  const std::size_t n = f.a.rows();
  Vec x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[f.piv[i]];
  for (std::size_t i = 1; i < n; ++i) x[i] -= simd::dot(f.a.row(i), x.data(), i);
  for (std::size_t k = n; k-- > 0;) {
    x[k] = (x[k] - simd::dot(f.a.row(k) + k + 1, x.data() + k + 1, n - k - 1)) / f.a(k, k);
  }
  std::memcpy(b, x.data(), n * sizeof(double));
}

Mat lu_solve_matrix(const Lu& f, const Mat& b) {
  Mat x = b;
  Vec col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    lu_solve(f, col.data());
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = col[i];
  }
  return x;
}

}  // namespace balpol::la
