#pragma once

#include <functional>
#include <span>
#include <vector>

#include "metaprompter/tape.hpp"

namespace mpr {

/// Builds a scalar function of its inputs on the given tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every entry of every input.
/// Relative error uses the denominator max(|analytic|, 1e-8).
/// Requires h in [1e-7, 1e-3]; throws NumericError on a non-finite f.
GradCheckResult finite_diff_check(const TapeFunction& f, std::span<const Tensor> inputs,
                                  double h = 1e-6);

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                         double h = 1e-6);

}  // namespace mpr
