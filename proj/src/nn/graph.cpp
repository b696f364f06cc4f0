#include "nn/graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "common/error.hpp"
#include "nn/rng.hpp"

namespace tlb::nn {

NodeId Graph::add_input(Shape per_sample) {
  if (input_ >= 0) throw Error(Errc::InvalidArgument, "graph already has an input");
  Node node;
  node.shape = per_sample.with_batch(1);
  nodes_.push_back(std::move(node));
  input_ = static_cast<NodeId>(nodes_.size()) - 1;
  output_ = input_;
  planned_ = false;
  return input_;
}

NodeId Graph::add(std::unique_ptr<Layer> layer, std::vector<NodeId> inputs) {
  if (inputs.empty()) throw Error(Errc::InvalidArgument, layer->name() + ": no inputs");
  std::vector<Shape> in_shapes;
  for (NodeId i : inputs) {
    if (i < 0 || i >= size()) throw Error(Errc::InvalidArgument, layer->name() + ": bad input id");
    in_shapes.push_back(nodes_[i].shape);
  }
  if (by_name_.contains(layer->name()))
    throw Error(Errc::InvalidArgument, "duplicate layer name " + layer->name());

  Node node;
  node.shape = layer->output_shape(in_shapes).with_batch(1);
  node.inputs = std::move(inputs);
  node.layer = std::move(layer);
  const auto id = static_cast<NodeId>(nodes_.size());
  for (NodeId i : node.inputs) nodes_[i].consumers.push_back(id);
  by_name_.emplace(node.layer->name(), id);
  nodes_.push_back(std::move(node));
  output_ = id;
  planned_ = false;
  return id;
}

NodeId Graph::find(const std::string& layer_name) const {
  const auto it = by_name_.find(layer_name);
  return it == by_name_.end() ? -1 : it->second;
}

void Graph::plan() {
  const int n = size();
  // A node takes part in backward when it owns trainable parameters or sits
  // downstream of one; frozen prefixes keep no activations at all.
  requires_grad_.assign(n, false);
  for (int i = 0; i < n; ++i) {
    const Node& node = nodes_[i];
    if (!node.layer) continue;
    bool req = false;
    for (const Param* p : node.layer->params()) req = req || p->trainable;
    for (NodeId j : node.inputs) req = req || requires_grad_[j];
    requires_grad_[i] = req;
  }
  needed_in_backward_.assign(n, false);
  last_forward_use_.assign(n, -1);
  for (int i = n - 1; i >= 0; --i) {
    const Node& node = nodes_[i];
    bool needed = requires_grad_[i] && node.layer->needs_output_for_backward();
    for (NodeId c : node.consumers) {
      const Layer* cl = nodes_[c].layer.get();
      last_forward_use_[i] = std::max(last_forward_use_[i], c);
      if (requires_grad_[c] && cl->needs_inputs_for_backward()) needed = true;
      // rebuilding a dropped consumer output reads this node
      if (cl->recomputable() && needed_in_backward_[c]) needed = true;
    }
    needed_in_backward_[i] = needed;
  }
  planned_ = true;
}

std::vector<const Tensor*> Graph::input_values(NodeId id) const {
  std::vector<const Tensor*> in;
  for (NodeId i : nodes_[id].inputs) in.push_back(&nodes_[i].out);
  return in;
}

const Tensor& Graph::forward(const Tensor& batch, Mode mode, std::span<const NodeId> keep) {
  if (input_ < 0) throw Error(Errc::InvalidArgument, "graph has no input");
  const Shape& expect = nodes_[input_].shape;
  const Shape got = batch.shape();
  if (got.c != expect.c || got.h != expect.h || got.w != expect.w)
    throw Error(Errc::ShapeMismatch,
                "input batch " + to_string(got) + " does not match " + to_string(expect));
  // trainable flags may have changed since the last pass
  if (!planned_ || mode == Mode::Train) plan();

  std::vector<bool> pinned(nodes_.size(), false);
  pinned[output_] = true;
  for (NodeId k : keep) pinned.at(k) = true;

  nodes_[input_].out = batch;
  for (NodeId id = 0; id < size(); ++id) {
    Node& node = nodes_[id];
    if (!node.layer) continue;
    const auto in = input_values(id);
    const auto t0 = std::chrono::steady_clock::now();
    node.layer->forward(in, node.out, mode);
    if (profiler_)
      profiler_(*node.layer,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), false);
    node.grad.release();

    for (NodeId j : node.inputs) {
      if (last_forward_use_[j] != id || pinned[j]) continue;
      Node& producer = nodes_[j];
      bool drop;
      if (mode == Mode::Infer)
        drop = true;
      else
        drop = !needed_in_backward_[j] ||
               (producer.layer != nullptr && producer.layer->recomputable());
      if (drop && j != input_) producer.out.release();
      if (drop && j == input_ && mode == Mode::Infer) producer.out.release();
    }
  }
  return nodes_[output_].out;
}

void Graph::materialize(NodeId id) {
  Node& node = nodes_[id];
  if (node.out.allocated() || node.out.shape().numel() == 0) return;
  if (!node.layer || !node.layer->recomputable())
    throw Error(Errc::InvalidArgument, "activation of node " + std::to_string(id) +
                                           " was released and cannot be rebuilt");
  for (NodeId j : node.inputs) materialize(j);
  const auto in = input_values(id);
  node.layer->recompute(in, node.out);
}

void Graph::backward(const Tensor& dout) {
  Node& out_node = nodes_[output_];
  if (dout.shape() != out_node.out.shape())
    throw Error(Errc::ShapeMismatch, "output gradient " + to_string(dout.shape()) +
                                         " does not match " + to_string(out_node.out.shape()));
  out_node.grad = dout;

  for (NodeId id = output_; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.layer) continue;
    if (!node.grad.allocated() || !requires_grad_[id]) {
      node.out.release();
      node.grad.release();
      continue;
    }
    Layer& layer = *node.layer;
    if (layer.needs_inputs_for_backward())
      for (NodeId j : node.inputs) materialize(j);
    if (layer.needs_output_for_backward()) materialize(id);

    std::vector<Tensor*> din;
    for (NodeId j : node.inputs) {
      if (j == input_ || !requires_grad_[j]) {
        din.push_back(nullptr);
        continue;
      }
      Node& producer = nodes_[j];
      if (!producer.grad.allocated())
        producer.grad.reset(producer.shape.with_batch(node.out.shape().n));
      din.push_back(&producer.grad);
    }
    const auto in = input_values(id);
    const auto t0 = std::chrono::steady_clock::now();
    layer.backward(in, node.out, node.grad, din);
    if (profiler_)
      profiler_(layer, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                true);
    node.grad.release();
    node.out.release();
  }
  nodes_[input_].out.release();
}

void Graph::clear_activations() {
  for (Node& node : nodes_) {
    node.out.release();
    node.grad.release();
  }
}

std::vector<Param*> Graph::params() {
  std::vector<Param*> out;
  for (Node& node : nodes_)
    if (node.layer)
      for (Param* p : node.layer->params()) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, Param*>> Graph::named_params() {
  std::vector<std::pair<std::string, Param*>> out;
  for (Node& node : nodes_)
    if (node.layer)
      for (Param* p : node.layer->params()) out.emplace_back(node.layer->name() + "/" + p->name, p);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Graph::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Node& node : nodes_)
    if (node.layer)
      for (const Buffer& b : node.layer->buffers())
        out.emplace_back(node.layer->name() + "/" + b.name, b.tensor);
  return out;
}

void initialize(Graph& graph, std::uint64_t seed) {
  std::uint64_t index = 0;
  for (Param* p : graph.params()) {
    Rng rng(mix_seed(seed, index++));
    switch (p->init) {
      case Init::Zeros:
        p->value.fill(0.0f);
        break;
      case Init::Ones:
        p->value.fill(1.0f);
        break;
      case Init::GlorotUniform: {
        const float limit = std::sqrt(6.0f / static_cast<float>(p->fan_in + p->fan_out));
        for (float& v : p->value.values()) v = rng.uniform(-limit, limit);
        break;
      }
    }
  }
  for (auto& [name, buffer] : graph.named_buffers())
    buffer->fill(name.ends_with("moving_variance") ? 1.0f : 0.0f);
}

std::int64_t count_params(Graph& graph, bool trainable_only) {
  std::int64_t total = 0;
  for (Param* p : graph.params())
    if (!trainable_only || p->trainable) total += static_cast<std::int64_t>(p->value.size());
  if (!trainable_only)
    for (auto& [name, buffer] : graph.named_buffers())
      total += static_cast<std::int64_t>(buffer->size());
  return total;
}

}  // namespace tlb::nn
