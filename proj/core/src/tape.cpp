#include "rma/tape.hpp"

#include <stdexcept>

namespace rma {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on a detached Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor Gradients::of(const Var& v) const {
  if (v.id() < grads_.size() && reached_[v.id()]) return grads_[v.id()];
  return Tensor::zeros(v.shape());
}

bool Gradients::reached(const Var& v) const {
  return v.id() < reached_.size() && reached_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, OpParams params) {
  if (kind == OpKind::kLeaf) throw std::logic_error("use Tape::leaf for leaves");
  Node n;
  n.kind = kind;
  n.params = std::move(params);
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape() != this) {
      throw std::invalid_argument(std::string(op_name(kind)) +
                                  ": input belongs to a different tape");
    }
    n.inputs.push_back(v.id());
    in.push_back(&nodes_[v.id()].value);
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = evaluate_op(kind, in, n.params);
  n.value.check_finite(op_name(kind));
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& output) const {
  if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
  if (output.tape() != this) throw std::invalid_argument("backward: Var from another tape");
  const auto& out = nodes_.at(output.id());
  if (out.value.size() != 1) {
    throw ShapeError("backward requires a scalar output, got shape " +
                     shape_string(out.value.shape()));
  }
  Gradients result;
  result.grads_.resize(nodes_.size());
  result.reached_.assign(nodes_.size(), false);
  if (!out.requires_grad) return result;

  result.grads_[output.id()] = Tensor::filled(out.value.shape(), 1.0);
  result.reached_[output.id()] = true;

  std::vector<const Tensor*> in;
  std::vector<bool> need;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    const auto& n = nodes_[id];
    if (!result.reached_[id] || n.kind == OpKind::kLeaf || !n.requires_grad) continue;
    in.clear();
    need.clear();
    for (auto src : n.inputs) {
      in.push_back(&nodes_[src].value);
      need.push_back(nodes_[src].requires_grad);
    }
    auto local = differentiate_op(n.kind, in, n.value, result.grads_[id], n.params, need);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!need[k]) continue;
      const auto src = n.inputs[k];
      if (!result.reached_[src]) {
        result.grads_[src] = std::move(local[k]);
        result.reached_[src] = true;
      } else {
        auto acc = result.grads_[src].mutable_data();
        auto add = local[k].data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
      }
    }
    // Interior gradients are no longer needed once propagated.
    if (id != output.id()) result.grads_[id] = Tensor{};
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].kind != OpKind::kLeaf && id != output.id()) result.reached_[id] = false;
  }
  return result;
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> in;
  for (const auto& n : nodes_) {
    if (n.kind == OpKind::kLeaf) {
      values.push_back(n.value);
      continue;
    }
    in.clear();
    for (auto src : n.inputs) in.push_back(&values[src]);
    values.push_back(evaluate_op(n.kind, in, n.params));
  }
  return values;
}

Var forward_op(OpKind kind, std::span<const Var> inputs, OpParams params) {
  if (inputs.empty() || !inputs.front().valid()) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": no valid inputs");
  }
  return inputs.front().tape()->record(kind, inputs, std::move(params));
}

namespace {
Var unary(OpKind kind, const Var& x, OpParams p = {}) {
  const Var in[] = {x};
  return forward_op(kind, in, std::move(p));
}
}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return forward_op(OpKind::kMatMul, in);
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride) {
  const Var in[] = {x, weight, bias};
  OpParams p;
  p.stride = stride;
  return forward_op(OpKind::kConv2d, in, p);
}

Var operator+(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return forward_op(OpKind::kAdd, in);
}

Var operator-(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return forward_op(OpKind::kSub, in);
}

Var relu(const Var& x) { return unary(OpKind::kRelu, x); }
Var mean(const Var& x) { return unary(OpKind::kMean, x); }
Var sum(const Var& x) { return unary(OpKind::kSum, x); }

Var mul_scalar(const Var& x, double c) {
  OpParams p;
  p.scalar = c;
  return unary(OpKind::kMulScalar, x, p);
}

Var flatten(const Var& x) { return unary(OpKind::kFlatten, x); }

Var reshape(const Var& x, Shape shape) {
  OpParams p;
  p.shape = std::move(shape);
  return unary(OpKind::kReshape, x, p);
}

Var l2_normalize(const Var& x) { return unary(OpKind::kL2Normalize, x); }
Var sq_l2_norm(const Var& x) { return unary(OpKind::kSqL2Norm, x); }
Var l2_norm(const Var& x) { return unary(OpKind::kL2Norm, x); }

Var avg_pool2d(const Var& x, std::size_t window) {
  OpParams p;
  p.window = window;
  return unary(OpKind::kAvgPool2d, x, p);
}

Var softmax_cross_entropy(const Var& logits, std::size_t label) {
  OpParams p;
  p.label = label;
  return unary(OpKind::kSoftmaxXent, logits, p);
}

Var sigmoid_bce(const Var& logit, double target) {
  OpParams p;
  p.scalar = target;
  return unary(OpKind::kSigmoidBce, logit, p);
}

}  // namespace rma
