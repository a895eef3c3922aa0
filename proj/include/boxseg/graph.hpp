#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "boxseg/tensor.hpp"

namespace boxseg {

class ParamSet;

enum class OpKind {
  kConstant,
  kVariable,
  kParam,
  kConv2d,
  kRelu,
  kSigmoid,
  kSoftmax,
  kMul,
  kAdd,
  kScale,
  kResizeNearest,
  kResizeBilinear,
  kConcatChannels,
  kSliceChannels,
  kSum,
  kWeightedSum,
  kSoftCrossEntropy,
  kNegLogLikelihood,
};

const char* to_string(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& dims() const { return value().dims(); }
};

// Tape of operations in creation (= topological) order. Backward visits
// nodes in decreasing id order, so accumulation order is fixed.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var param(const std::string& name, const Tensor& value, bool trainable);

  // Appends an op node. The node requires a gradient iff any parent does;
  // when none does the backward function is dropped.
  Var record(OpKind kind, std::vector<std::size_t> parents, Tensor value,
             BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient slot of a node, zero-initialised on first access.
  Tensor& grad_slot(std::size_t id);

  // Loss must hold exactly one element.
  void backward(Var loss);

  // Gradients of every trainable param node, by name.
  ParamSet param_grads() const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string name;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

}  // namespace boxseg
