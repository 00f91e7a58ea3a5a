#include "metaprompter/adam.hpp"

#include <cmath>

#include "metaprompter/errors.hpp"

namespace mpr {
namespace {

void check_pairs(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw DimensionError("optimizer: gradient shape " + shape_string(grads[i].shape()) +
                           " for parameter " + shape_string(params[i]->shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("optimizer: non-finite gradient");
  }
}

}  // namespace

void adam_update(AdamState& state, std::span<Tensor* const> params,
                 std::span<const Tensor> grads, double lr) {
  check_pairs(params, grads);
  if (state.first.empty()) {
    for (const Tensor* p : params) {
      state.first.push_back(Tensor::zeros_like(*p));
      state.second.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.first.size() != params.size()) throw DimensionError("adam: state/parameter count");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = state.first[k];
    Tensor& v = state.second[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void sgd_update(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  check_pairs(params, grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
  }
}

}  // namespace mpr
