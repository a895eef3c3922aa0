#include "boxseg/graph.hpp"

#include <algorithm>

#include "boxseg/error.hpp"
#include "boxseg/param_set.hpp"

namespace boxseg {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kVariable: return "variable";
    case OpKind::kParam: return "param";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMul: return "mul";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kResizeNearest: return "resize_nearest";
    case OpKind::kResizeBilinear: return "resize_bilinear";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kSliceChannels: return "slice_channels";
    case OpKind::kSum: return "sum";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kSoftCrossEntropy: return "soft_cross_entropy";
    case OpKind::kNegLogLikelihood: return "neg_log_likelihood";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  return push(Node{OpKind::kConstant, {}, std::move(value), {}, false, {}, {}});
}

Var Graph::variable(Tensor value) {
  return push(Node{OpKind::kVariable, {}, std::move(value), {}, true, {}, {}});
}

Var Graph::param(const std::string& name, const Tensor& value, bool trainable) {
  return push(Node{OpKind::kParam, {}, value, {}, trainable, {}, name});
}

Var Graph::record(OpKind kind, std::vector<std::size_t> parents, Tensor value,
                  BackwardFn backward) {
  const bool needs = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) {
    return nodes_.at(p).requires_grad;
  });
  if (!needs) backward = nullptr;
  return push(Node{kind, std::move(parents), std::move(value), {}, needs,
                   std::move(backward), {}});
}

const Tensor& Graph::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.dims() != n.value.dims()) {
    throw Error(ErrorKind::kState,
                "grad requested for node " + std::to_string(id) + " (" +
                    to_string(n.kind) + ") before backward reached it");
  }
  return n.grad;
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.dims() != n.value.dims()) n.grad = Tensor(n.value.dims());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw_invalid("backward: loss belongs to another graph");
  if (value(loss.id).numel() != 1) {
    throw Error(ErrorKind::kShape,
                "backward: loss must be scalar, got " + shape_string(value(loss.id).dims()),
                "loss");
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id).fill(1.0);

  std::vector<char> reachable(loss.id + 1, 0);
  reachable[loss.id] = 1;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    Node& n = nodes_[id];
    for (std::size_t p : n.parents) reachable[p] = 1;
    grad_slot(id);
    if (n.requires_grad && n.backward) n.backward(*this, id);
  }
}

ParamSet Graph::param_grads() const {
  ParamSet out;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::kParam || !n.requires_grad) continue;
    Tensor g = n.grad.dims() == n.value.dims() ? n.grad : Tensor(n.value.dims());
    if (out.contains(n.name)) {
      Tensor& acc = out.at(n.name);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    } else {
      out.add(n.name, std::move(g));
    }
  }
  return out;
}

}  // namespace boxseg
