#include "advlat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace advlat {

namespace {

double evaluate(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  Var in = tape.constant(x);
  return f(tape, in).value().item();
}

}  // namespace

GradCheckReport finite_diff_check(const TapeFunction& f, const Tensor& x, double h, double tol) {
  GradCheckReport report;
  {
    Tape tape;
    Var in = tape.leaf(x);
    Var loss = f(tape, in);
    report.analytic = tape.backward(loss).of(in);
  }
  report.numeric = Tensor(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = evaluate(f, probe);
    probe[i] = orig - h;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    report.numeric[i] = (up - down) / (2.0 * h);
  }
  report.max_relative_error = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double g = report.analytic[i], n = report.numeric[i];
    const double denom = std::max({std::abs(g), std::abs(n), 1e-8});
    const double err = std::abs(g - n) / denom;
    if (!(err <= report.max_relative_error)) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_relative_error <= tol;
  return report;
}

}  // namespace advlat
