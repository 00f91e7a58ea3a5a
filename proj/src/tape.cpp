#include "metaprompter/tape.hpp"

#include <string>

#include "metaprompter/errors.hpp"

namespace mpr {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf tensor contains non-finite values");
  nodes_.push_back(Node{std::move(value), nullptr, true, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, false, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant_ref(const Tensor& value) {
  nodes_.push_back(Node{Tensor{}, &value, false, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id_];
  return n.external ? *n.external : n.owned;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id_].requires_grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (in_backward_) throw ContractError("cannot record ops during backward");
  if (!value.all_finite()) throw NumericError("op produced a non-finite value");
  bool needs_grad = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs_grad = needs_grad || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, needs_grad,
                        needs_grad ? std::move(backward) : BackwardFn{}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad(Var v) {
  check_owner(v);
  if (!in_backward_) throw ContractError("grad() is only available during backward");
  Tensor& g = grads_[v.id_];
  if (g.shape() != value(v).shape() || g.empty() != value(v).empty()) {
    g = Tensor::zeros_like(value(v));
  }
  return g;
}

std::vector<Tensor> Tape::backward(Var loss, std::span<const Var> leaves) {
  check_owner(loss);
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(value(loss).shape()));
  }
  for (const Var& l : leaves) {
    check_owner(l);
    if (!nodes_[l.id_].requires_grad || nodes_[l.id_].backward) {
      throw ContractError("backward target is not a leaf created with Tape::leaf");
    }
  }

  grads_.assign(loss.id_ + 1, Tensor{});
  in_backward_ = true;
  try {
    if (nodes_[loss.id_].requires_grad) {
      grads_[loss.id_] = Tensor(value(loss).shape(), {1.0});
    }
    for (std::uint32_t i = loss.id_ + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.backward || grads_[i].empty()) continue;
      // The rule may accumulate into grads_ of earlier nodes only.
      const Tensor g = std::move(grads_[i]);
      if (!g.all_finite()) {
        throw NumericError("non-finite gradient at tape node " + std::to_string(i));
      }
      node.backward(*this, g);
    }
  } catch (...) {
    in_backward_ = false;
    grads_.clear();
    throw;
  }
  in_backward_ = false;

  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& l : leaves) {
    if (l.id_ < grads_.size() && !grads_[l.id_].empty()) {
      out.push_back(std::move(grads_[l.id_]));
      if (!out.back().all_finite()) throw NumericError("non-finite leaf gradient");
    } else {
      out.push_back(Tensor::zeros_like(value(l)));
    }
  }
  // Duplicate leaves in the request share one accumulator.
  for (std::size_t a = 0; a < leaves.size(); ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      if (leaves[a].id_ == leaves[b].id_) out[a] = out[b];
    }
  }
  grads_.clear();
  return out;
}

}  // namespace mpr
