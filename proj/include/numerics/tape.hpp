#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "numerics/tensor.hpp"

namespace numerics {

// A learnable tensor plus its gradient accumulator. The accumulator keeps the
// parameter's shape and is zero unless something was accumulated into it, so
// parameters untouched by a backward pass report exactly-zero gradients.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor init) : value(std::move(init)), grad(value.shape()) {}

  void reset(Tensor init) {
    value = std::move(init);
    grad = Tensor(value.shape());
  }
  void zero_grad() { grad.fill(0.0); }
  std::size_t numel() const { return value.numel(); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Linear record of primitive operations. Creation order is a topological
// order, so one reverse sweep visits every recorded op exactly once. A Tape
// is single-owner: build, call backward once, read gradients, discard.
class Tape {
 public:
  // fn receives the node's accumulated upstream gradient and pushes
  // contributions into the node's inputs via accumulate_grad.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Var input(Tensor value, bool needs_grad = false);

  // Traces a parameter; repeated calls with the same Param reuse one node, so
  // shared parameters accumulate correctly.
  Var leaf(Param& p);

  // Registers a custom operation. needs_grad is inferred from the inputs
  // (invalid handles are ignored); when no input needs gradients the closure
  // is dropped.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  // --- primitive traced ops ---
  Var matmul(Var a, Var b);
  // a (m x k) times b^T where b is (n x k); the natural shape for y = x W^T
  // with weights stored out x in.
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_row_broadcast(Var m, Var row);  // m: R x C, row: C
  Var softplus(Var x);
  Var silu(Var x);
  Var sum(Var x);   // scalar
  Var mean(Var x);  // scalar
  Var slice_cols(Var x, std::size_t c0, std::size_t c1);  // columns [c0, c1)
  Var row(Var x, std::size_t r);                           // 1 x C slice
  Var reverse_rows(Var x);
  Var reshape(Var x, Shape shape);  // same numel, new extents

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. loss must
  // be scalar (numel == 1).
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient accumulated for v during backward; empty tensor means zero.
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;
  bool needs_grad(Var v) const;

  void accumulate_grad(Var v, Tensor&& g);
  void accumulate_grad(Var v, const Tensor& g);

  // Leaves in creation order, for deterministic gradient merges.
  const std::vector<std::pair<Param*, Var>>& leaves() const { return leaves_; }
  // Adds every leaf's tape gradient into its Param::grad. Single-threaded
  // convenience; batched training merges per-worker buffers instead.
  void flush_param_grads();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool needs_grad = false;
  };

  int push_node(Tensor value, bool needs_grad, BackwardFn fn);
  bool any_needs_grad(std::initializer_list<Var> inputs) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<Param*, Var>> leaves_;
  Tensor empty_;
};

}  // namespace numerics
