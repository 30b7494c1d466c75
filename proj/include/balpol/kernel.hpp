#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "balpol/la.hpp"

namespace balpol {

// Mahalanobis RBF: K(x,x') = exp(-(x-x')^T S^-1 (x-x') / s^2). The enum
// exists so other kernels can slot in, but only the paper's named example
// ships.
enum class KernelKind { mahalanobis_rbf };

struct KernelSpec {
  KernelKind kind = KernelKind::mahalanobis_rbf;
  double bandwidth = 1.0;
  // nullopt means "estimate the scale matrix from the sample".
  std::optional<la::Mat> scale;
};

// (n-1)-denominator sample covariance with a ridge so the result is SPD:
// S + eps I, eps = 1e-8 trace(S)/d (1e-8 if the trace is zero).
la::Mat sample_covariance(const la::Mat& X);

// Kernel with the scale matrix resolved and factored. whiten = L^-1 where
// S = L L^T, so the Mahalanobis distance is a plain squared Euclidean
// distance between whitened points.
struct ResolvedKernel {
  la::Mat whiten;  // d x d lower triangular
  double s2 = 1.0;

  void whiten_point(const double* x, double* z) const;
  la::Mat whiten_all(const la::Mat& X) const;
};

ResolvedKernel resolve_kernel(const KernelSpec& spec, const la::Mat& X);

double kernel_eval(const ResolvedKernel& rk, const double* x, const double* y,
                   std::size_t d);
// Convenience for explicit-scale specs (no sample needed).
double kernel_eval(const KernelSpec& spec, const la::Vec& x, const la::Vec& y);

struct GramMatrix {
  la::Mat K;
  std::size_t n() const { return K.rows(); }
};

GramMatrix gram_matrix(const ResolvedKernel& rk, const la::Mat& X);
GramMatrix gram_matrix(const KernelSpec& spec, const la::Mat& X);

// Per-arm Gram matrices for one dataset; arms sharing a spec share the
// matrix. This is the cache the solver and learner lean on: compute once
// per (kernel, dataset) pair, reuse across every QP solve.
struct GramSet {
  std::vector<std::shared_ptr<const GramMatrix>> per_arm;
  const GramMatrix& arm(int t) const { return *per_arm[t]; }
  int arms() const { return static_cast<int>(per_arm.size()); }
};

GramSet compute_gram_set(const std::vector<KernelSpec>& specs, int m, const la::Mat& X);

}  // namespace balpol
