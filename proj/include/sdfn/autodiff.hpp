#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdfn/tensor.hpp"

namespace sdfn {

/// Named, ordered collection of trainable tensors.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  Map::const_iterator begin() const { return values_.begin(); }
  Map::const_iterator end() const { return values_.end(); }
  Map::iterator begin() { return values_.begin(); }
  Map::iterator end() { return values_.end(); }
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map values_;
};

/// Accumulated gradient per parameter name; shapes mirror the ParamStore.
using GradientMap = std::map<std::string, Tensor>;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so creation order
// is a valid topological order and backward is a single reverse sweep.
// A tape is single-use: build, call backward once, discard.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(const ParamStore* params = nullptr, bool record_gradients = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable input that is not a named parameter.
  Var leaf(Tensor value);
  /// Leaf bound to a parameter of the attached store; one node per name.
  Var param(const std::string& name);

  /// Appends an op result. Raises NumericsError when the value is not finite.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward, const char* op);
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient slot of a node, zero-initialized on first use; nullptr when the
  /// node does not require a gradient.
  Tensor* grad_slot(std::size_t id);

  GradientMap backward(Var loss);
  Tensor grad_of(Var v) const;

  bool recording() const { return record_; }
  const ParamStore* params() const { return params_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Hash of every branch decision (ReLU masks, max-pool winners) taken while
  // building this tape. Two evaluations with equal signatures lie on the same
  // smooth piece of the objective.
  std::uint64_t branch_signature() const { return branch_signature_; }
  void note_branch(std::uint64_t bits);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);

  const ParamStore* params_;
  bool record_;
  bool used_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::uint64_t branch_signature_ = 0;
};

}  // namespace sdfn
