#pragma once

#include <functional>

#include "balpol/la.hpp"

namespace balpol {

struct BfgsOptions {
  int max_iters = 200;
  double grad_tol = 1e-6;
  int max_ls_evals = 30;
};

struct BfgsResult {
  la::Vec x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iters = 0;
  bool converged = false;
};

// Objective callback: fill grad, return f. Called with x of fixed size.
using ObjectiveFn = std::function<double(const la::Vec& x, la::Vec& grad)>;
// Per-accepted-iterate hook (iter, f, grad_norm).
using IterHook = std::function<void(int, double, double)>;

// Dense BFGS with a Wolfe line search (backtracking + interpolation).
// The line search only ever accepts non-increasing steps; if no acceptable
// step exists the run stops at the current iterate.
BfgsResult bfgs_minimize(const ObjectiveFn& fg, la::Vec x0, const BfgsOptions& opts = {},
                         const IterHook& hook = {});

}  // namespace balpol
