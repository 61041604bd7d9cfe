#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "grutv/tensor.hpp"

namespace grutv {

// Primitive set. The first seven are the public forward_primitive kinds;
// exp_neg_relu and bce are the fused kernels needed by the decay terms and
// the training loss.
enum class Op : std::uint8_t {
  leaf,
  affine,    // W^T x + b, W is (p x q), x is (p), b and output are (q)
  concat,    // vectors only
  sigmoid,
  tanh_fn,
  hadamard,
  add,
  scale,        // alpha * x, alpha recorded on the node
  exp_neg_relu, // exp(-max(0, u)), elementwise
  bce,          // mean binary cross entropy of yhat against recorded labels
};

const char* op_name(Op op);

struct ValueRef {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

struct TapeNode {
  Op op = Op::leaf;
  std::vector<std::int32_t> inputs;
  double alpha = 0.0;   // scale factor
  Vec labels;           // bce targets
  Tensor value;
  bool requires_grad = false;  // leaves only
};

// Recorded computation over tensors. Single-writer; replaying the node list
// recomputes all forward values in place, which is what the finite-difference
// checker leans on.
class Tape {
 public:
  ValueRef leaf(Tensor t, bool requires_grad = true);
  ValueRef constant(Tensor t) { return leaf(std::move(t), false); }
  ValueRef constant(const Vec& v) { return leaf(Tensor::vector(v), false); }

  ValueRef affine(ValueRef w, ValueRef x, ValueRef b);
  ValueRef concat(std::span<const ValueRef> parts);
  ValueRef concat(std::initializer_list<ValueRef> parts) {
    return concat(std::span<const ValueRef>(parts.begin(), parts.size()));
  }
  ValueRef sigmoid(ValueRef x);
  ValueRef tanh(ValueRef x);
  ValueRef hadamard(ValueRef a, ValueRef b);
  ValueRef add(ValueRef a, ValueRef b);
  ValueRef scale(double alpha, ValueRef x);
  ValueRef exp_neg_relu(ValueRef u);
  ValueRef bce(ValueRef yhat, const Vec& labels);

  // Generic dispatch by kind; scale reads its factor from `alpha`.
  ValueRef forward_primitive(Op kind, std::span<const ValueRef> inputs, double alpha = 0.0);

  const Tensor& value(ValueRef r) const { return node(r).value; }
  Tensor& leaf_value(ValueRef r);

  // Recompute every non-leaf value in order. Bit-identical to the original
  // forward because the same kernel runs both times.
  void replay();

  // Reverse sweep of seed . output; accumulates into per-node grad buffers.
  // Gradients for every leaf are available through grad() afterwards.
  void backward(ValueRef output, const Tensor& seed);

  const Tensor& grad(ValueRef r) const;

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear();

  const TapeNode& node(ValueRef r) const { return nodes_[static_cast<std::size_t>(r.id)]; }
  std::vector<std::int32_t> leaf_ids(bool grad_only) const;

 private:
  TapeNode& node(ValueRef r) { return nodes_[static_cast<std::size_t>(r.id)]; }
  ValueRef push(TapeNode n);
  void compute(TapeNode& n);

  std::vector<TapeNode> nodes_;
  std::vector<Tensor> grads_;
  bool grads_valid_ = false;
};

// Clamp distance from {0,1} used by the bce kernel.
inline constexpr double kProbClamp = 1e-12;

// Largest double strictly below 1; sigmoid/tanh outputs never leave the open
// interval even when the exact result would round onto an endpoint.
inline constexpr double kOneBelowUnit = 1.0 - std::numeric_limits<double>::epsilon() / 2;

}  // namespace grutv
