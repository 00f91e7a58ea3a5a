#include "metaprompter/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "metaprompter/errors.hpp"

namespace mpr {
namespace {

double evaluate(const TapeFunction& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& in : inputs) vars.push_back(tape.constant_ref(in));
  const double v = f(tape, vars).value().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const TapeFunction& f, std::span<const Tensor> inputs,
                                  double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ContractError("finite_diff_check: h outside [1e-7, 1e-3]");

  std::vector<Tensor> grads;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& in : inputs) leaves.push_back(tape.leaf(in));
    Var loss = f(tape, leaves);
    grads = tape.backward(loss, leaves);
  }

  GradCheckResult result;
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      const double xp = x0 + h;
      const double xm = x0 - h;
      probe[k][i] = xp;
      const double fp = evaluate(f, probe);
      probe[k][i] = xm;
      const double fm = evaluate(f, probe);
      probe[k][i] = x0;
      // Divide by the representable step actually taken.
      const double numeric = (fp - fm) / (xp - xm);
      const double analytic = grads[k][i];
      const double rel = std::abs(numeric - analytic) / std::max(std::abs(analytic), 1e-8);
      if (rel > result.max_rel_error || (k == 0 && i == 0)) {
        result = {rel, k, i, analytic, numeric};
      }
    }
  }
  return result;
}

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  const TapeFunction wrapped = [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); };
  return finite_diff_check(wrapped, std::span<const Tensor>(&x, 1), h).max_rel_error;
}

}  // namespace mpr
