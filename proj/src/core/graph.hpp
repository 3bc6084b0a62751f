// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/layers.hpp"
#include "core/params.hpp"
#include "core/tensor.hpp"

namespace bpc {

/// Index used in Node::inputs to refer to the graph input.
inline constexpr int kGraphInput = -1;

struct Node {
  std::string id;
  std::unique_ptr<Layer> layer;
  std::vector<int> inputs;
};

/// Single-input, single-output DAG of layers kept in topological order
/// (every node only consumes earlier nodes or the graph input).
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  ParamStore params;
  ActShape input_shape{};
  /// Free-form description: seed name, task ("value" or "signal"), sampling rate, stage history.
  nlohmann::json meta = nlohmann::json::object();

  int add(std::string id, std::unique_ptr<Layer> layer, std::vector<int> inputs);
  template <class L>
    requires std::derived_from<L, Layer>
  int add(std::string id, L layer, std::vector<int> inputs) {
    std::unique_ptr<Layer> p = std::make_unique<L>(std::move(layer));
    return add(std::move(id), std::move(p), std::move(inputs));
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  Node& node(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  int find(const std::string& id) const;
  int output() const { return output_ < 0 ? size() - 1 : output_; }
  void set_output(int i) { output_ = i; }
  std::vector<int> consumers(int i) const;

  /// Output shape of every node; throws naming the first inconsistent node.
  std::vector<ActShape> infer_shapes() const;
  ActShape output_shape() const;

  /// Runs the network and keeps activations for a following backward().
  Tensor forward(const Tensor& x, const RunOptions& opts);
  /// Back-propagates `dout` and accumulates into parameter gradients.
  void backward(const Tensor& dout, const RunOptions& opts);
  const Tensor& input_grad() const { return input_grad_; }
  const Tensor& activation(int i) const { return acts_.at(static_cast<std::size_t>(i)); }

  /// Deployable parameter count of the graph as it stands.
  std::size_t param_count() const;

  /// Removes node `i`, rewiring its consumers to its single input.
  void bypass(int i);
  /// Replaces the layer of node `i`.
  void replace(int i, std::unique_ptr<Layer> layer);
  /// Drops parameters no layer references.
  void compact_params();

  nlohmann::json to_json() const;
  /// Rebuilds a graph from `to_json()` output with parameters already loaded.
  static ModelGraph from_json(const nlohmann::json& j, ParamStore params);

 private:
  std::vector<Node> nodes_;
  int output_ = -1;

  Tensor input_;
  std::vector<Tensor> acts_;
  Tensor input_grad_;
  bool has_forward_ = false;
};

}  // namespace bpc
