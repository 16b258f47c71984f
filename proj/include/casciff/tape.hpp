#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casciff/tensor.hpp"

namespace casciff {

// A learnable tensor. Gradients accumulate across backward passes until
// zero_grad(). `regularized` marks weight matrices that enter the L2 loss
// term; biases and the learned scaling coefficients stay out of it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool regularized = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool reg = false)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), regularized(reg) {}

  void zero_grad() { grad.zero(); }
};

class Tape;

// Handle to a node on a Tape.
struct Value {
  std::int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

// Append-only reverse-mode computation record. Build a forward pass through
// the op methods, call backward(loss) once, read gradients off Parameters.
// Creation order is the topological order, so the backward sweep is a single
// reverse loop; all arithmetic goes through the kernel table, which keeps
// results identical across scalar/SIMD variants.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Value input(Tensor t);        // constant, no gradient
  Value leaf(Parameter& p);     // differentiable leaf

  Value matmul(Value a, Value b);           // (m,k)|(k,) × (k,n)
  Value add(Value a, Value b);              // same shape
  Value sub(Value a, Value b);
  Value add_bias(Value x, Value b);         // (m,n) + (n,) broadcast over rows
  Value mul(Value a, Value b);              // elementwise
  Value mul_rows(Value x, Value v);         // (m,n) ⊙ (n,) broadcast over rows
  Value scale(Value s, Value x);            // s: shape (1,)
  Value relu(Value x);
  Value sigmoid(Value x);
  Value tanh(Value x);
  Value softmax_rows(Value x);
  Value concat(const std::vector<Value>& parts);   // rank-1 parts
  Value concat_cols(Value a, Value b);             // (m,p) ⧺ (m,q) → (m,p+q)
  Value slice_rows(Value x, std::size_t r);        // first r rows of (m,n)
  Value row(Value x, std::size_t r);               // row r of (m,n) as (n,)
  Value element(Value x, std::size_t i);           // x[i] as a (1,) value
  Value mean_pool_rows(Value x, std::size_t live); // mean of first `live` rows
  Value mse(Value a, Value b);                     // scalar
  Value cross_entropy(Value probs, std::vector<std::size_t> labels);  // scalar
  Value sum_of_squares(const std::vector<Value>& xs);                 // scalar

  const Tensor& value(Value v) const;
  // Accumulates d(loss)/d(leaf) into each Parameter's grad.
  void backward(Value loss);

  // Smallest |pre-activation| seen by any relu on this tape; the gradient
  // checker uses it to skip coordinates sitting on a kink.
  double min_abs_relu_input() const { return min_abs_relu_in_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kInput, kLeaf, kMatMul, kAdd, kSub, kAddBias, kMul, kMulRows, kScale,
    kRelu, kSigmoid, kTanh, kSoftmax, kConcat, kConcatCols, kSliceRows,
    kRow, kElement, kMeanPool, kMse, kCrossEntropy, kSumSquares,
  };

  struct Node {
    Tensor val;
    Tensor grad;
    Op op;
    bool requires_grad = false;
    std::int32_t a = -1, b = -1;
    Parameter* param = nullptr;
    std::vector<std::int32_t> list;
    std::vector<std::size_t> labels;
    std::size_t live = 0;
  };

  Node& node(Value v);
  const Node& cnode(Value v) const;
  Value push(Node n);
  Value unary(Op op, Value x, Tensor out);
  bool wants(std::int32_t idx) const;
  Tensor& grad_of(std::int32_t idx);

  std::vector<Node> nodes_;
  double min_abs_relu_in_ = 1e300;
};

// Process-wide count of Tape::backward calls. The optimizer refuses to step
// before at least one backward pass has produced gradients.
std::uint64_t backward_generation();

}  // namespace casciff
