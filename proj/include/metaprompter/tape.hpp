#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "metaprompter/tensor.hpp"

namespace mpr {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Linear record of executed ops for reverse-mode differentiation.
///
/// Values are immutable once recorded. Only tensors introduced through leaf()
/// are differentiated; every op whose inputs are all constants is recorded
/// without a backward rule, so frozen parameters never carry gradient state.
/// Gradients are tape-local and released after each backward() call.
class Tape {
 public:
  /// Receives the gradient flowing into an op's output.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input.
  Var leaf(Tensor value);
  /// Non-trainable input, copied onto the tape.
  Var constant(Tensor value);
  /// Non-trainable input referenced in place; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of a scalar `loss` w.r.t. each of `leaves`, in order. A leaf
  /// the loss does not depend on receives a zero tensor.
  std::vector<Tensor> backward(Var loss, std::span<const Var> leaves);
  std::vector<Tensor> backward(Var loss, std::initializer_list<Var> leaves) {
    return backward(loss, std::span<const Var>(leaves.begin(), leaves.size()));
  }

  /// Records an op output. `backward` is dropped when no input requires grad.
  /// Throws NumericError if `value` has a non-finite entry.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Gradient accumulator of `v`; only valid inside a backward rule.
  Tensor& grad(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  bool in_backward_ = false;
};

}  // namespace mpr
