#pragma once
// Tape-based reverse-mode automatic differentiation.
//
// A Tape is a Wengert list: every op appends a node holding its value and a
// closure that pushes the output gradient to its inputs. backward() walks the
// list once in reverse creation order, which is a valid reverse topological
// order and makes gradients deterministic. A tape is consumed by its backward
// call; a second call throws StateError.
//
// Model weights live outside the tape as Parameters. Tape::param() makes a
// leaf whose gradient is accumulated (+=) into Parameter::grad, which is how
// gradient accumulation across micro-batches works.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rrhf/tensor.hpp"

namespace rrhf {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  // Pushes d(loss)/d(output) into the inputs' gradient buffers.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  // With record_gradients == false the tape only evaluates values (inference).
  explicit Tape(bool record_gradients = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // The parameter's value is referenced, not copied: it must outlive the tape
  // and stay unchanged until backward() has run.
  Var param(Parameter& p);
  Var param(const Parameter& p);  // never receives gradients

  // Extension point for ops defined outside this file.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Gradient accumulator of `v`, zero-initialised on first access.
  Tensor& grad_buffer(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.external ? *n.external : n.value;
  }

  void backward(Var scalar);

  // Gradient of a tape-owned leaf after backward(). Parameters receive theirs
  // in Parameter::grad instead.
  const Tensor& grad(Var v) const;

  bool recording() const noexcept { return recording_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter storage, read in place
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

// --- ops --------------------------------------------------------------------
// Shapes are checked strictly; the only broadcast is add_bias.

Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_bias(Var a, Var bias);  // [m,n] + [n]
Var relu(Var a);                // subgradient 0 at 0
Var exp(Var a);
Var square(Var a);
Var softplus(Var a);
Var sum(Var a);   // -> [1]
Var mean(Var a);  // -> [1]
Var detach(Var a);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var embedding(Var table, std::span<const TokenId> ids);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var stack(std::span<const Var> scalars);  // n scalars -> [n]
Var element(Var a, std::size_t index);    // -> [1]

// Fused multi-head causal self-attention over a packed [T, 3d] QKV matrix.
Var causal_attention(Var qkv, std::size_t heads);

// axis is 0 or 1 (or -1 for the last axis) on rank-2 input; 0/-1 on rank 1.
Var log_softmax(Var x, int axis = -1);

// out[i] = log_softmax(logits[i])[targets[i]]
Var gather_log_prob(Var logits, std::span<const TokenId> targets);

}  // namespace rrhf
