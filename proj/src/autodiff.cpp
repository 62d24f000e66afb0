#include "sdfn/autodiff.hpp"

#include "sdfn/errors.hpp"

namespace sdfn {

void ParamStore::add(const std::string& name, Tensor value) {
  if (!values_.emplace(name, std::move(value)).second) {
    throw ConfigError("duplicate parameter '" + name + "'");
  }
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tape::Tape(const ParamStore* params, bool record_gradients) : params_(params), record_(record_gradients) {
  nodes_.reserve(1024);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericsError("non-finite constant");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericsError("non-finite leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  return push(std::move(n));
}

Var Tape::param(const std::string& name) {
  if (!params_) throw ConfigError("tape has no parameter store");
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.value = params_->at(name);
  n.requires_grad = record_;
  Var v = push(std::move(n));
  param_ids_.emplace(name, v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward, const char* op) {
  if (!value.all_finite()) throw NumericsError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward backward, const char* op) {
  if (!value.all_finite()) throw NumericsError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::note_branch(std::uint64_t bits) {
  branch_signature_ ^= bits + 0x9e3779b97f4a7c15ULL + (branch_signature_ << 6) + (branch_signature_ >> 2);
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape() != this) throw InvariantError("loss belongs to a different tape");
  if (loss.value().size() != 1 || loss.value().rank() > 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (used_) throw InvariantError("tape already consumed by a backward pass");
  used_ = true;

  if (Tensor* g = grad_slot(loss.id())) (*g)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    const Tensor& g = n.grad;
    n.backward(*this, g);
  }

  GradientMap grads;
  if (params_) {
    for (const auto& [name, value] : *params_) {
      auto it = param_ids_.find(name);
      if (it != param_ids_.end() && nodes_[it->second].has_grad) {
        grads.emplace(name, nodes_[it->second].grad);
      } else {
        grads.emplace(name, Tensor(value.shape(), 0.0));
      }
    }
  }
  return grads;
}

Tensor Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
}

}  // namespace sdfn
