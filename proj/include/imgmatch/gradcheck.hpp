#pragma once

#include <functional>

#include "imgmatch/tape.hpp"

namespace imgmatch::numcore {

// Builds a scalar loss on `tape` from the leaf `x`.
using ScalarFn = std::function<Var(Tape& tape, Var x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  Tensor64 analytic;
  Tensor64 numeric;
};

// Compares tape gradients of f at x against central differences
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). Per-coordinate error is
// |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const ScalarFn& f, const Tensor64& x, double eps);

double relative_error(double analytic, double numeric);

}  // namespace imgmatch::numcore
