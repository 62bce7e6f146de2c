#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records primitive operations in execution order; every node's
// inputs precede it, so the reverse sweep in backward() is a single pass
// over the record. Values are computed eagerly when an op is recorded.
// A tape is confined to one thread at a time.

#include <cstddef>
#include <span>
#include <vector>

#include "rma/tensor.hpp"

namespace rma {

enum class OpKind {
  kLeaf,
  kMatMul,         // (m,k)x(k,n) -> (m,n) or (m,k)x(k) -> (m)
  kConv2d,         // x(c,h,w), w(o,c,kh,kw), b(o) -> (o,oh,ow); valid padding
  kAdd,            // same-shape elementwise
  kSub,            // same-shape elementwise
  kRelu,
  kMean,           // all elements -> scalar
  kSum,            // all elements -> scalar
  kMulScalar,      // x * params.scalar
  kFlatten,        // any -> rank 1, row-major
  kReshape,        // any -> params.shape
  kL2Normalize,    // x / ||x||_2, errors when ||x||_2 <= 1e-12
  kSqL2Norm,       // sum of squares -> scalar
  kL2Norm,         // Euclidean norm -> scalar; zero subgradient at 0
  kAvgPool2d,      // (c,h,w) non-overlapping params.window x params.window
  kSoftmaxXent,    // logits(n) -> -log softmax(logits)[params.label]
  kSigmoidBce,     // logit scalar -> BCE against params.scalar in {0,1}
};

const char* op_name(OpKind kind);

struct OpParams {
  std::size_t stride = 1;
  std::size_t window = 2;
  std::size_t label = 0;
  double scalar = 1.0;
  Shape shape;
};

inline constexpr double kNormalizeEpsilon = 1e-12;

/// Pure forward kernel for one primitive. Validates shapes.
Tensor evaluate_op(OpKind kind, std::span<const Tensor* const> inputs,
                   const OpParams& params);

/// Pure vector-Jacobian product for one primitive. Returns one gradient per
/// input; entries whose `need` flag is false are left as default tensors.
std::vector<Tensor> differentiate_op(OpKind kind,
                                     std::span<const Tensor* const> inputs,
                                     const Tensor& output,
                                     const Tensor& grad_output,
                                     const OpParams& params,
                                     const std::vector<bool>& need);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a backward sweep: d(output)/d(leaf) for every leaf reached.
class Gradients {
 public:
  /// Gradient with respect to leaf `v`; zeros when `v` was not reached (for
  /// example a leaf created with requires_grad == false). Interior gradients
  /// are dropped during the sweep.
  Tensor of(const Var& v) const;
  bool reached(const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> reached_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(OpKind kind, std::span<const Var> inputs, OpParams params = {});

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }

  /// Reverse sweep from a single-element output.
  Gradients backward(const Var& output) const;

  /// Recomputes every recorded node from the leaf values, in order.
  std::vector<Tensor> replay() const;

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::size_t> inputs;
    OpParams params;
    Tensor value;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

/// Records `kind` applied to `inputs` on their (shared) tape.
Var forward_op(OpKind kind, std::span<const Var> inputs, OpParams params = {});

Var matmul(const Var& a, const Var& b);
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride = 1);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var relu(const Var& x);
Var mean(const Var& x);
Var sum(const Var& x);
Var mul_scalar(const Var& x, double c);
Var flatten(const Var& x);
Var reshape(const Var& x, Shape shape);
Var l2_normalize(const Var& x);
Var sq_l2_norm(const Var& x);
Var l2_norm(const Var& x);
Var avg_pool2d(const Var& x, std::size_t window);
Var softmax_cross_entropy(const Var& logits, std::size_t label);
Var sigmoid_bce(const Var& logit, double target);

}  // namespace rma
