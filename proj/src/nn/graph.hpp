#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nn/layer.hpp"
#include "nn/tensor.hpp"

namespace tlb::nn {

using NodeId = int;

// Directed acyclic graph of layers in topological (insertion) order.
//
// Training-mode forward keeps only the activations backward actually needs;
// outputs of recomputable layers (batch norm, concatenation, padding, ...) are
// dropped after their last forward consumer and rebuilt on demand in backward.
class Graph {
 public:
  Graph() = default;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId add_input(Shape per_sample);
  NodeId add(std::unique_ptr<Layer> layer, std::vector<NodeId> inputs);

  template <typename L, typename... Args>
  NodeId emplace(std::vector<NodeId> inputs, Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...), std::move(inputs));
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  // Per-sample shape of a node's output (n = 1).
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }
  Layer* layer(NodeId id) { return nodes_.at(id).layer.get(); }
  const Layer* layer(NodeId id) const { return nodes_.at(id).layer.get(); }
  const std::vector<NodeId>& inputs_of(NodeId id) const { return nodes_.at(id).inputs; }
  NodeId find(const std::string& layer_name) const;

  void set_output(NodeId id) { output_ = id; }
  NodeId output() const { return output_; }
  NodeId input() const { return input_; }

  // Runs the graph on a batch. Nodes listed in `keep` stay readable via value().
  const Tensor& forward(const Tensor& batch, Mode mode, std::span<const NodeId> keep = {});
  const Tensor& value(NodeId id) const { return nodes_.at(id).out; }

  // Back-propagates `dout` (gradient w.r.t. the output node) after a training forward.
  void backward(const Tensor& dout);

  // Drops every cached activation.
  void clear_activations();

  // Optional per-layer timing hook: (layer, seconds, is_backward).
  using Profiler = std::function<void(const Layer&, double, bool)>;
  void set_profiler(Profiler profiler) { profiler_ = std::move(profiler); }

  std::vector<Param*> params();
  std::vector<std::pair<std::string, Param*>> named_params();
  std::vector<std::pair<std::string, Tensor*>> named_buffers();

 private:
  struct Node {
    std::unique_ptr<Layer> layer;  // null for the input node
    std::vector<NodeId> inputs;
    std::vector<NodeId> consumers;
    Shape shape;
    Tensor out;
    Tensor grad;
  };

  void plan();
  void materialize(NodeId id);
  std::vector<const Tensor*> input_values(NodeId id) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> by_name_;
  NodeId input_ = -1;
  NodeId output_ = -1;
  Profiler profiler_;

  // execution plan, rebuilt lazily after the graph changes
  bool planned_ = false;
  std::vector<bool> requires_grad_;
  std::vector<bool> needed_in_backward_;
  std::vector<NodeId> last_forward_use_;
};

// Keras-default initialization: Glorot-uniform kernels, zero biases, unit
// batch-norm scales. Every parameter draws from its own seeded stream.
void initialize(Graph& graph, std::uint64_t seed);

std::int64_t count_params(Graph& graph, bool trainable_only);

}  // namespace tlb::nn
