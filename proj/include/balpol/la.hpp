#pragma once

#include <cstddef>
#include <optional>
#include <vector>

// Small dense linear algebra on row-major matrices, sized for desk-scale
// problems (n in the hundreds to low thousands). Inner loops go through
// balpol::simd.
namespace balpol::la {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return a_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

  double* row(std::size_t i) { return a_.data() + i * cols_; }
  const double* row(std::size_t i) const { return a_.data() + i * cols_; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Vec a_;
};

Mat transpose(const Mat& a);

// y = A x
void matvec(const Mat& a, const double* x, double* y);
Vec matvec(const Mat& a, const Vec& x);
// y = A^T x
void matvec_t(const Mat& a, const double* x, double* y);

// x^T A y for square A
double quadform(const Mat& a, const double* x, const double* y);

// Lower-triangular Cholesky in place; false if a pivot is not positive.
bool cholesky_inplace(Mat& a);
// Solve L L^T x = b given the lower factor.
void chol_solve(const Mat& l, double* b);
Vec chol_solve(const Mat& l, Vec b);
double chol_logdet(const Mat& l);

// Cholesky with one ridge retry (rel * trace/n added to the diagonal).
std::optional<Mat> cholesky_with_ridge(Mat a, double rel = 1e-10);

struct Lu {
  Mat a;
  std::vector<int> piv;
  bool ok = false;
};
Lu lu_factor(Mat a);
void lu_solve(const Lu& f, double* b);
// Solve A X = B column by column.
Mat lu_solve_matrix(const Lu& f, const Mat& b);

}  // namespace balpol::la
