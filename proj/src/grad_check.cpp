#include "tsn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsn {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Tensor leaf = x;
  leaf.set_requires_grad(false);
  const Var out = f(tape, tape.leaf(std::move(leaf)));
  const Tensor& v = tape.value(out);
  if (v.size() != 1) throw std::invalid_argument("grad_check: function is not scalar");
  if (!std::isfinite(v[0])) throw NonFiniteError("grad_check: non-finite evaluation");
  return v[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step h must be positive");
  GradCheckResult r;
  {
    Tape tape;
    Tensor leaf = point;
    leaf.set_requires_grad(true);
    const Var x = tape.leaf(std::move(leaf));
    const Var out = f(tape, x);
    tape.backward(out);
    r.analytic = tape.grad(x);
  }
  r.numeric = Tensor(point.shape());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = probe[i];
    probe[i] = x0 + h;
    const double up = evaluate(f, probe);
    probe[i] = x0 - h;
    const double down = evaluate(f, probe);
    probe[i] = x0;
    r.numeric[i] = (up - down) / (2.0 * h);
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i)
    scale = std::max({scale, std::abs(r.analytic[i]), std::abs(r.numeric[i])});
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double a = r.analytic[i], n = r.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-3 * scale});
    const double err = denom == 0.0 ? 0.0 : std::abs(a - n) / denom;
    if (err > r.max_relative_error) {
      r.max_relative_error = err;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace tsn
