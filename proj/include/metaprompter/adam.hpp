#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaprompter/tensor.hpp"

namespace mpr {

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;
};

/// One Adam step in place: m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
/// p <- p - lr * mhat / (sqrt(vhat) + eps). Moments are created on the first
/// call. Throws DimensionError on shape disagreement, NumericError on a
/// non-finite gradient.
void adam_update(AdamState& state, std::span<Tensor* const> params,
                 std::span<const Tensor> grads, double lr);

/// p <- p - lr * g for each pair.
void sgd_update(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

}  // namespace mpr
