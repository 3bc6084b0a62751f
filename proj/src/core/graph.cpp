// SPDX-License-Identifier: Apache-2.0
#include "core/graph.hpp"

#include <fmt/format.h>

namespace bpc {

using nlohmann::json;

ModelGraph::ModelGraph(const ModelGraph& o)
    : params(o.params), input_shape(o.input_shape), meta(o.meta), output_(o.output_) {
  nodes_.reserve(o.nodes_.size());
  for (const auto& n : o.nodes_) nodes_.push_back(Node{n.id, n.layer->clone(), n.inputs});
}

ModelGraph& ModelGraph::operator=(const ModelGraph& o) {
  if (this != &o) {
    ModelGraph tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

int ModelGraph::add(std::string id, std::unique_ptr<Layer> layer, std::vector<int> inputs) {
  if (find(id) >= 0) throw Error("duplicate node id '" + id + "'");
  if (inputs.empty()) throw Error("node '" + id + "' has no inputs");
  for (int s : inputs)
    if (s < kGraphInput || s >= size())
      throw Error(fmt::format("node '{}' consumes unknown producer {}", id, s));
  nodes_.push_back(Node{std::move(id), std::move(layer), std::move(inputs)});
  has_forward_ = false;
  return size() - 1;
}

int ModelGraph::find(const std::string& id) const {
  for (int i = 0; i < size(); ++i)
    if (nodes_[static_cast<std::size_t>(i)].id == id) return i;
  return -1;
}

std::vector<int> ModelGraph::consumers(int i) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j)
    for (int s : nodes_[static_cast<std::size_t>(j)].inputs)
      if (s == i) {
        out.push_back(j);
        break;
      }
  return out;
}

std::vector<ActShape> ModelGraph::infer_shapes() const {
  std::vector<ActShape> shapes(nodes_.size());
  for (int i = 0; i < size(); ++i) {
    const Node& n = node(i);
    std::vector<ActShape> in;
    for (int s : n.inputs) in.push_back(s == kGraphInput ? input_shape : shapes[static_cast<std::size_t>(s)]);
    try {
      shapes[static_cast<std::size_t>(i)] = n.layer->infer(in);
    } catch (const Error& e) {
      throw Error(fmt::format("node '{}' ({}): {}", n.id, kind_name(n.layer->kind()), e.what()));
    }
  }
  return shapes;
}

ActShape ModelGraph::output_shape() const { return infer_shapes().at(static_cast<std::size_t>(output())); }

Tensor ModelGraph::forward(const Tensor& x, const RunOptions& opts) {
  if (x.rank() != 3 || x.dim(1) != input_shape.channels || x.dim(2) != input_shape.length)
    throw Error(fmt::format("graph input expects (N, {}, {}), got {}", input_shape.channels, input_shape.length,
                            shape_str(x.shape())));
  input_ = x;
  input_.drop_grad();
  acts_.assign(nodes_.size(), Tensor());
  RunContext ctx{params, opts};
  for (int i = 0; i < size(); ++i) {
    Node& n = node(i);
    std::vector<const Tensor*> in;
    for (int s : n.inputs) in.push_back(s == kGraphInput ? &input_ : &acts_[static_cast<std::size_t>(s)]);
    try {
      acts_[static_cast<std::size_t>(i)] = n.layer->forward(in, ctx);
    } catch (const Error& e) {
      throw Error(fmt::format("node '{}' ({}): {}", n.id, kind_name(n.layer->kind()), e.what()));
    }
  }
  has_forward_ = true;
  return acts_.at(static_cast<std::size_t>(output()));
}

void ModelGraph::backward(const Tensor& dout, const RunOptions& opts) {
  if (!has_forward_) throw Error("backward called before forward");
  const Tensor& y = acts_.at(static_cast<std::size_t>(output()));
  if (dout.shape() != y.shape())
    throw Error("loss gradient " + shape_str(dout.shape()) + " does not match output " + shape_str(y.shape()));
  for (int i = 0; i < params.size(); ++i)
    if (params.at(i).role != ParamRole::Buffer) params.value(i).ensure_grad();

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(output())] = dout;
  input_grad_ = Tensor(input_.shape());
  RunContext ctx{params, opts};
  for (int i = output(); i >= 0; --i) {
    auto& g = grads[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    Node& n = node(i);
    std::vector<const Tensor*> in;
    std::vector<Tensor*> din;
    for (int s : n.inputs) {
      if (s == kGraphInput) {
        in.push_back(&input_);
        din.push_back(&input_grad_);
      } else {
        auto& a = acts_[static_cast<std::size_t>(s)];
        auto& gs = grads[static_cast<std::size_t>(s)];
        if (gs.empty()) gs = Tensor(a.shape());
        in.push_back(&a);
        din.push_back(&gs);
      }
    }
    try {
      n.layer->backward(in, acts_[static_cast<std::size_t>(i)], g, din, ctx);
    } catch (const Error& e) {
      throw Error(fmt::format("node '{}' ({}) backward: {}", n.id, kind_name(n.layer->kind()), e.what()));
    }
    g = Tensor();
  }
}

std::size_t ModelGraph::param_count() const {
  std::size_t n = 0;
  for (const auto& nd : nodes_) n += nd.layer->param_count(params);
  return n;
}

void ModelGraph::bypass(int i) {
  Node& victim = node(i);
  if (victim.inputs.size() != 1) throw Error("only single-input nodes can be bypassed: '" + victim.id + "'");
  const int src = victim.inputs[0];
  const int out = output();
  for (auto& n : nodes_)
    for (int& s : n.inputs) {
      if (s == i)
        s = src;
      else if (s > i)
        --s;
    }
  nodes_.erase(nodes_.begin() + i);
  if (out == i) {
    if (src == kGraphInput) throw Error("cannot bypass the only path from input to output");
    output_ = src;
  } else {
    output_ = out > i ? out - 1 : out;
  }
  has_forward_ = false;
}

void ModelGraph::replace(int i, std::unique_ptr<Layer> layer) {
  node(i).layer = std::move(layer);
  has_forward_ = false;
}

void ModelGraph::compact_params() {
  ParamStore fresh;
  for (auto& n : nodes_) n.layer->remap(params, fresh);
  params = std::move(fresh);
  has_forward_ = false;
}

json ModelGraph::to_json() const {
  json nodes = json::array();
  for (const auto& n : nodes_) {
    json ins = json::array();
    for (int s : n.inputs) ins.push_back(s == kGraphInput ? std::string("input") : node(s).id);
    nodes.push_back({{"id", n.id}, {"kind", kind_name(n.layer->kind())}, {"inputs", ins},
                     {"attrs", n.layer->to_json(params)}});
  }
  return {{"input", {{"channels", input_shape.channels}, {"length", input_shape.length}}},
          {"output", node(output()).id},
          {"meta", meta},
          {"nodes", nodes}};
}

ModelGraph ModelGraph::from_json(const json& j, ParamStore params) {
  ModelGraph g;
  g.params = std::move(params);
  g.input_shape = {j.at("input").at("channels").get<int>(), j.at("input").at("length").get<int>()};
  g.meta = j.value("meta", json::object());
  for (const auto& nj : j.at("nodes")) {
    std::vector<int> ins;
    for (const auto& s : nj.at("inputs")) {
      const std::string id = s.get<std::string>();
      if (id == "input") {
        ins.push_back(kGraphInput);
      } else {
        const int k = g.find(id);
        if (k < 0) throw Error("node '" + nj.at("id").get<std::string>() + "' references unknown node '" + id + "'");
        ins.push_back(k);
      }
    }
    g.add(nj.at("id").get<std::string>(),
          layer_from_json(kind_from_name(nj.at("kind").get<std::string>()), nj.at("attrs"), g.params), ins);
  }
  const int out = g.find(j.at("output").get<std::string>());
  if (out < 0) throw Error("graph output node not found");
  g.set_output(out);
  (void)g.infer_shapes();
  return g;
}

}  // namespace bpc
