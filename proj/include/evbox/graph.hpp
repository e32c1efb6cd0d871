#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "evbox/tensor.hpp"

namespace evbox {

enum class OpKind {
  kInput,
  kParameter,
  kConv2d,
  kMaxPool2,
  kRelu,
  kLinear,
  kBatchNorm,
  kResampleBilinear,
  kConcatChannels,
  kRoiMaxPool,
  kLogistic,
  kReshape,
  kGatherRows,
  kConcatCols,
  kSliceCols,
  kBceWithLogits,
  kSmoothL1Loss,
  kMean,
  kSum,
  kSquare,
  kAffineCombine,
};

// Named learnable (or tracked) tensor. Lives outside any graph so parameters
// survive across training iterations; graphs bind to it by pointer.
template <typename S>
struct ParamTensor {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;

  ParamTensor(std::string n, Tensor<S> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), S(0)); }
};

// Reverse-mode tape. Nodes are appended in evaluation order (define-by-run,
// forward values computed eagerly by the op builders in ops.hpp), so inputs
// always reference earlier ids and one reverse sweep implements backward.
//
// Gradients accumulate across backward calls until zero_grad(); gradients of
// parameter-bound leaves accumulate directly into the ParamTensor.
template <typename S>
class Graph {
 public:
  // Backward callback: receives the node's output gradient for the current
  // sweep and accumulates into its inputs' sweep slots.
  using BackwardFn =
      std::function<void(Graph&, const Tensor<S>& out_grad, std::vector<Tensor<S>>& sweep)>;

  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor<S> value;
    Tensor<S> grad;  // lazily allocated accumulator (non-parameter nodes)
    ParamTensor<S>* param = nullptr;
    BackwardFn backward_fn;
  };

  int input(Tensor<S> value) {
    return add_node(OpKind::kInput, {}, std::move(value), nullptr);
  }

  int parameter(ParamTensor<S>& p) {
    int id = add_node(OpKind::kParameter, {}, p.value, nullptr);
    nodes_[static_cast<size_t>(id)].param = &p;
    return id;
  }

  int add_node(OpKind kind, std::vector<int> inputs, Tensor<S> value, BackwardFn fn) {
    for (int i : inputs) {
      if (i < 0 || i >= static_cast<int>(nodes_.size())) {
        throw ContractError("graph node input id out of range");
      }
    }
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor<S>{}, nullptr,
                          std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  const Tensor<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Accumulated gradient of a node. For parameter-bound leaves this is the
  // ParamTensor's grad.
  const Tensor<S>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.param) return n.param->grad;
    if (n.grad.empty()) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  // Reverse sweep from a scalar node. Adds this sweep's gradients on top of
  // whatever has already accumulated.
  void backward(int loss_id) {
    const Node& loss = node(loss_id);
    if (loss.value.size() != 1) {
      throw ContractError("backward: loss node must be scalar, has shape " +
                          shape_str(loss.value.shape()));
    }
    std::vector<Tensor<S>> sweep(nodes_.size());
    sweep[static_cast<size_t>(loss_id)] = Tensor<S>(loss.value.shape(), S(1));
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      Tensor<S>& g = sweep[static_cast<size_t>(i)];
      if (g.empty()) continue;
      if (n.backward_fn) n.backward_fn(*this, g, sweep);
      if (n.param) {
        S* acc = n.param->grad.data();
        const S* src = g.data();
        for (long k = 0; k < g.size(); ++k) acc[k] += src[k];
      } else {
        if (n.grad.empty()) n.grad = Tensor<S>(n.value.shape());
        S* acc = n.grad.data();
        const S* src = g.data();
        for (long k = 0; k < g.size(); ++k) acc[k] += src[k];
      }
    }
  }

  // Clears accumulated gradients of every node, including bound parameters.
  void zero_grad() {
    for (Node& n : nodes_) {
      if (n.param) {
        n.param->zero_grad();
      } else if (!n.grad.empty()) {
        std::fill(n.grad.vec().begin(), n.grad.vec().end(), S(0));
      }
    }
  }

  // Sweep-slot accessor for backward callbacks; allocates zeros on first use.
  static Tensor<S>& sweep_slot(std::vector<Tensor<S>>& sweep, int id,
                               const std::vector<int>& shape) {
    Tensor<S>& t = sweep[static_cast<size_t>(id)];
    if (t.empty()) t = Tensor<S>(shape);
    return t;
  }

 private:
  std::deque<Node> nodes_;
};

}  // namespace evbox
