#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "flowpos/tensor.hpp"

namespace flowpos {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Record of executed primitive operations in topological order. Rebuilt per
// forward pass; backward sweeps the record once in reverse. Single-threaded
// per instance.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() copies the value onto the tape; param() additionally
  // remembers the external tensor so backward flushes the accumulated
  // gradient into external.grad.
  Var input(Tensor value, bool requires_grad = false);
  Var param(Tensor& external);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);  // same-shape, or b is a {d}/{1,d} row bias over {m,d}
  Var mul(Var a, Var b);  // same broadcast rule as add
  Var scale(Var a, double c);
  Var relu(Var a);
  Var tanh(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  Var cross_entropy(Var logits, const std::vector<int>& targets);
  Var transpose(Var a);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);  // [c0, c1)
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var table, const std::vector<int>& rows);
  Var sum(Var a);  // scalar {1,1}

  const Tensor& value(Var v) const;
  const std::vector<double>& grad(Var v) const;
  Tensor grad_tensor(Var v) const;

  // Accumulate a seed gradient on a node (multi-output backward entry point).
  void seed_grad(Var v, const Tensor& g);
  // Reverse sweep over every recorded op, then flush param leaves.
  void run_backward();
  // Scalar-loss convenience: seed 1 on `loss`, then run_backward().
  void backward(Var loss);
  void zero_all_grads();

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kInput,
    kMatmul,
    kAdd,
    kAddRow,
    kMul,
    kMulRow,
    kScale,
    kRelu,
    kTanh,
    kSoftmaxRows,
    kLayerNorm,
    kCrossEntropy,
    kTranspose,
    kSliceCols,
    kConcatCols,
    kConcatRows,
    kGatherRows,
    kSum,
  };

  struct Node {
    Op op;
    std::vector<int> in;
    Tensor val;
    std::vector<double> grad;       // same numel as val
    bool requires_grad = false;
    Tensor* external = nullptr;     // param leaf flush target
    std::vector<int> iaux;          // targets / gather rows / slice bounds
    std::vector<double> daux;       // saved stats (probs, xhat, inv_std)
    double c = 0.0;                 // scale constant / layer_norm eps
  };

  int push(Node n);
  const Node& at(Var v) const;
  Node& at(Var v);
  void check_same_tape(Var v) const;
  bool any_requires(const std::vector<int>& in) const;
  void backward_node(int i);

  std::deque<Node> nodes_;  // deque keeps value()/grad() references stable
};

}  // namespace flowpos
