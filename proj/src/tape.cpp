#include "grutv/tape.hpp"

#include <cmath>

#include "grutv/errors.hpp"

namespace grutv {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::affine: return "affine";
    case Op::concat: return "concat";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh_fn: return "tanh";
    case Op::hadamard: return "hadamard";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::exp_neg_relu: return "exp_neg_relu";
    case Op::bce: return "bce";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  throw DimensionError(std::string(op_name(op)) + ": " + detail);
}

void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    shape_error(op, "operand shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
}

}  // namespace

ValueRef Tape::push(TapeNode n) {
  nodes_.push_back(std::move(n));
  grads_valid_ = false;
  return ValueRef{static_cast<std::int32_t>(nodes_.size() - 1)};
}

ValueRef Tape::leaf(Tensor t, bool requires_grad) {
  TapeNode n;
  n.op = Op::leaf;
  n.value = std::move(t);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tensor& Tape::leaf_value(ValueRef r) {
  TapeNode& n = node(r);
  if (n.op != Op::leaf) throw UsageError("leaf_value: node is not a leaf");
  return n.value;
}

void Tape::compute(TapeNode& n) {
  auto in = [&](std::size_t i) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
  };
  switch (n.op) {
    case Op::leaf:
      return;
    case Op::affine: {
      const Tensor& w = in(0);
      const Tensor& x = in(1);
      const Tensor& b = in(2);
      n.value.data().noalias() = w.mat().transpose() * x.data();
      n.value.data() += b.data();
      break;
    }
    case Op::concat: {
      Index at = 0;
      for (std::int32_t id : n.inputs) {
        const Vec& part = nodes_[static_cast<std::size_t>(id)].value.data();
        n.value.data().segment(at, part.size()) = part;
        at += part.size();
      }
      break;
    }
    case Op::sigmoid:
      // Saturated inputs round onto the endpoints; keep the codomain open.
      n.value.data() = (1.0 / (1.0 + (-in(0).data().array()).exp()))
                           .max(std::numeric_limits<double>::min())
                           .min(kOneBelowUnit);
      break;
    case Op::tanh_fn:
      n.value.data() = in(0).data().array().tanh().max(-kOneBelowUnit).min(kOneBelowUnit);
      break;
    case Op::hadamard:
      n.value.data() = in(0).data().cwiseProduct(in(1).data());
      break;
    case Op::add:
      n.value.data() = in(0).data() + in(1).data();
      break;
    case Op::scale:
      n.value.data() = n.alpha * in(0).data();
      break;
    case Op::exp_neg_relu:
      n.value.data() = (-in(0).data().array().max(0.0)).exp();
      break;
    case Op::bce: {
      const auto yhat = in(0).data().array().min(1.0 - kProbClamp).max(kProbClamp);
      const auto y = n.labels.array();
      n.value[0] = -(y * yhat.log() + (1.0 - y) * (1.0 - yhat).log()).mean();
      break;
    }
  }
  if (!n.value.all_finite()) {
    throw NumericError(std::string(op_name(n.op)) + ": non-finite output");
  }
}

ValueRef Tape::affine(ValueRef wr, ValueRef xr, ValueRef br) {
  const Tensor& w = node(wr).value;
  const Tensor& x = node(xr).value;
  const Tensor& b = node(br).value;
  if (w.rank() != 2) shape_error(Op::affine, "weight must be rank 2, got " + w.shape().str());
  if (x.rank() != 1 || b.rank() != 1) {
    shape_error(Op::affine, "input " + x.shape().str() + " and bias " + b.shape().str() + " must be vectors");
  }
  if (w.rows() != x.rows() || w.cols() != b.rows()) {
    shape_error(Op::affine, "weight " + w.shape().str() + " incompatible with input " +
                                x.shape().str() + " and bias " + b.shape().str());
  }
  TapeNode n;
  n.op = Op::affine;
  n.inputs = {wr.id, xr.id, br.id};
  n.value = Tensor::zeros(Shape{1, w.cols(), 0});
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::concat(std::span<const ValueRef> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  TapeNode n;
  n.op = Op::concat;
  Index total = 0;
  for (ValueRef r : parts) {
    const Tensor& t = node(r).value;
    if (t.rank() != 1) shape_error(Op::concat, "operands must be vectors, got " + t.shape().str());
    total += t.numel();
    n.inputs.push_back(r.id);
  }
  n.value = Tensor::zeros(Shape{1, total, 0});
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::sigmoid(ValueRef x) {
  TapeNode n;
  n.op = Op::sigmoid;
  n.inputs = {x.id};
  n.value = Tensor::zeros(node(x).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::tanh(ValueRef x) {
  TapeNode n;
  n.op = Op::tanh_fn;
  n.inputs = {x.id};
  n.value = Tensor::zeros(node(x).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::hadamard(ValueRef a, ValueRef b) {
  require_same_shape(Op::hadamard, node(a).value, node(b).value);
  TapeNode n;
  n.op = Op::hadamard;
  n.inputs = {a.id, b.id};
  n.value = Tensor::zeros(node(a).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::add(ValueRef a, ValueRef b) {
  require_same_shape(Op::add, node(a).value, node(b).value);
  TapeNode n;
  n.op = Op::add;
  n.inputs = {a.id, b.id};
  n.value = Tensor::zeros(node(a).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::scale(double alpha, ValueRef x) {
  TapeNode n;
  n.op = Op::scale;
  n.alpha = alpha;
  n.inputs = {x.id};
  n.value = Tensor::zeros(node(x).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::exp_neg_relu(ValueRef u) {
  TapeNode n;
  n.op = Op::exp_neg_relu;
  n.inputs = {u.id};
  n.value = Tensor::zeros(node(u).value.shape());
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::bce(ValueRef yhat, const Vec& labels) {
  const Tensor& p = node(yhat).value;
  if (p.rank() != 1) shape_error(Op::bce, "predictions must be a vector, got " + p.shape().str());
  if (p.numel() != labels.size()) {
    shape_error(Op::bce, "got " + std::to_string(p.numel()) + " predictions for " +
                             std::to_string(labels.size()) + " labels");
  }
  TapeNode n;
  n.op = Op::bce;
  n.inputs = {yhat.id};
  n.labels = labels;
  n.value = Tensor::zeros(Shape{1, 1, 0});
  compute(n);
  return push(std::move(n));
}

ValueRef Tape::forward_primitive(Op kind, std::span<const ValueRef> in, double alpha) {
  auto arity = [&](std::size_t k) {
    if (in.size() != k) {
      throw UsageError(std::string(op_name(kind)) + ": expected " + std::to_string(k) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case Op::affine: arity(3); return affine(in[0], in[1], in[2]);
    case Op::concat: return concat(in);
    case Op::sigmoid: arity(1); return sigmoid(in[0]);
    case Op::tanh_fn: arity(1); return tanh(in[0]);
    case Op::hadamard: arity(2); return hadamard(in[0], in[1]);
    case Op::add: arity(2); return add(in[0], in[1]);
    case Op::scale: arity(1); return scale(alpha, in[0]);
    case Op::exp_neg_relu: arity(1); return exp_neg_relu(in[0]);
    default: throw UsageError(std::string(op_name(kind)) + ": not a forward primitive");
  }
}

void Tape::replay() {
  for (TapeNode& n : nodes_) compute(n);
  grads_valid_ = false;
}

void Tape::backward(ValueRef output, const Tensor& seed) {
  if (nodes_.empty()) throw UsageError("backward: empty tape");
  if (!output.valid() || static_cast<std::size_t>(output.id) >= nodes_.size()) {
    throw UsageError("backward: invalid output node");
  }
  if (!(seed.shape() == node(output).value.shape())) {
    throw DimensionError("backward: seed shape " + seed.shape().str() +
                         " does not match output shape " + node(output).value.shape().str());
  }

  grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Tensor& v = nodes_[i].value;
    if (!(grads_[i].shape() == v.shape())) grads_[i] = Tensor::zeros(v.shape());
    else grads_[i].data().setZero();
  }
  grads_[static_cast<std::size_t>(output.id)].data() = seed.data();

  for (std::size_t k = static_cast<std::size_t>(output.id) + 1; k-- > 0;) {
    const TapeNode& n = nodes_[k];
    const Vec& g = grads_[k].data();
    if (n.op == Op::leaf) continue;
    auto gin = [&](std::size_t i) -> Vec& {
      return grads_[static_cast<std::size_t>(n.inputs[i])].data();
    };
    auto vin = [&](std::size_t i) -> const Tensor& {
      return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
    };
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::affine: {
        const Tensor& w = vin(0);
        const Tensor& x = vin(1);
        Eigen::Map<RowMat> gw(gin(0).data(), w.rows(), w.cols());
        gw.noalias() += x.data() * g.transpose();
        gin(1).noalias() += w.mat() * g;
        gin(2) += g;
        break;
      }
      case Op::concat: {
        Index at = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          Vec& gi = gin(i);
          gi += g.segment(at, gi.size());
          at += gi.size();
        }
        break;
      }
      case Op::sigmoid: {
        const auto s = n.value.data().array();
        gin(0).array() += g.array() * s * (1.0 - s);
        break;
      }
      case Op::tanh_fn: {
        const auto t = n.value.data().array();
        gin(0).array() += g.array() * (1.0 - t * t);
        break;
      }
      case Op::hadamard:
        gin(0).array() += g.array() * vin(1).data().array();
        gin(1).array() += g.array() * vin(0).data().array();
        break;
      case Op::add:
        gin(0) += g;
        gin(1) += g;
        break;
      case Op::scale:
        gin(0) += n.alpha * g;
        break;
      case Op::exp_neg_relu: {
        const auto u = vin(0).data().array();
        const auto out = n.value.data().array();
        gin(0).array() += (u > 0.0).select(-out * g.array(), Vec::Zero(g.size()).array());
        break;
      }
      case Op::bce: {
        const Index count = vin(0).numel();
        const auto raw = vin(0).data().array();
        const auto yhat = raw.min(1.0 - kProbClamp).max(kProbClamp);
        const auto y = n.labels.array();
        // Zero where the clamp is active: the forward value is flat there.
        const auto live = (raw > kProbClamp && raw < 1.0 - kProbClamp).cast<double>();
        gin(0).array() += g[0] * live * (-1.0 / static_cast<double>(count)) *
                          (y / yhat - (1.0 - y) / (1.0 - yhat));
        break;
      }
    }
  }
  grads_valid_ = true;
}

const Tensor& Tape::grad(ValueRef r) const {
  if (!grads_valid_) throw UsageError("grad: no backward pass recorded");
  return grads_[static_cast<std::size_t>(r.id)];
}

std::vector<std::int32_t> Tape::leaf_ids(bool grad_only) const {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::leaf && (!grad_only || nodes_[i].requires_grad)) {
      out.push_back(static_cast<std::int32_t>(i));
    }
  }
  return out;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  grads_valid_ = false;
}

}  // namespace grutv
