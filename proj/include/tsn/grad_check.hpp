#pragma once

#include <functional>

#include "tsn/tape.hpp"

namespace tsn {

/// A scalar function of one tensor, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

/// Compares the tape gradient of `f` at `point` with central differences of
/// step `h`. Per-coordinate error is |a - n| / max(|a|, |n|, 1e-3 * scale),
/// where scale is the largest gradient magnitude; exact zeros give zero error.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double h);

}  // namespace tsn
