#include "imgmatch/gradcheck.hpp"

#include <cmath>

namespace imgmatch::numcore {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const ScalarFn& f, const Tensor64& x) {
  Tape tape;
  Var loss = f(tape, tape.constant(x));
  const double v = loss.item();
  if (!std::isfinite(v)) {
    fail(ErrorKind::kNumeric, "grad_check: non-finite function value");
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor64& x, double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::kDomain, "grad_check: eps must be > 0");

  GradCheckResult result;
  {
    Tape tape;
    Var leaf = tape.leaf(x);
    Var loss = f(tape, leaf);
    if (!std::isfinite(loss.item())) {
      fail(ErrorKind::kNumeric, "grad_check: non-finite function value");
    }
    tape.backward(loss);
    result.analytic = tape.grad(leaf);
  }

  result.numeric = Tensor64(x.shape());
  Tensor64 probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(f, probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(f, probe);
    probe[i] = x[i];
    result.numeric[i] = (up - down) / (2.0 * eps);

    const double err = relative_error(result.analytic[i], result.numeric[i]);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace imgmatch::numcore
