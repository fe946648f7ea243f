#pragma once

#include <functional>

#include "advlat/autodiff.hpp"

namespace advlat {

struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

/// Scalar function of one tensor built on a fresh tape for every evaluation.
using TapeFunction = std::function<Var(Tape&, const Var&)>;

/// Compare tape gradients of f at x against central differences.
/// Relative error per coordinate is |g - n| / max(|g|, |n|, 1e-8); the check
/// passes iff the maximum is <= tol. Never throws for a failed comparison.
GradCheckReport finite_diff_check(const TapeFunction& f, const Tensor& x, double h = 1e-5, double tol = 1e-4);

}  // namespace advlat
