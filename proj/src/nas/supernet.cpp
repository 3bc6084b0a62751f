// SPDX-License-Identifier: Apache-2.0
#include "nas/supernet.hpp"

#include <random>

#include <fmt/format.h>

#include "core/softmax.hpp"

namespace bpc {

using nlohmann::json;

namespace {

bool replaceable(const ModelGraph& g, int i) {
  const auto* conv = dynamic_cast<const Conv1d*>(g.node(i).layer.get());
  return conv != nullptr && !conv->is_linear() && i != g.output();
}

Conv1d copy_conv(const ModelGraph& seed, const Conv1d& src, ParamStore& ps, const std::string& name) {
  const auto& w = seed.params.value(src.weight());
  const int wi = ps.add(name + ".weight", w, ParamRole::Weight);
  int bi = -1;
  if (src.bias() >= 0) bi = ps.add(name + ".bias", seed.params.value(src.bias()), ParamRole::Weight);
  ps.value(wi).drop_grad();
  if (bi >= 0) ps.value(bi).drop_grad();
  return Conv1d(src.spec(), wi, bi);
}

}  // namespace

ModelGraph build_supernet(const ModelGraph& seed, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  const auto shapes = seed.infer_shapes();
  ModelGraph g = seed;
  int sites = 0;
  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = seed.node(i);
    if (nd.layer->kind() == LayerKind::Choice) throw Error("seed already contains choice site '" + nd.id + "'");
    if (!replaceable(seed, i)) continue;
    const auto& conv = static_cast<const Conv1d&>(*nd.layer);
    const ConvSpec spec = conv.spec();
    if (spec.groups != 1)
      throw Error(fmt::format("convolution '{}' is grouped; only dense convolutions can become choice sites", nd.id));

    std::vector<Alternative> alts;
    alts.push_back({"C", {copy_conv(seed, conv, g.params, nd.id + ".C")}});

    ConvSpec dw = spec;
    dw.out_ch = spec.in_ch;
    dw.groups = spec.in_ch;
    dw.bias = false;
    ConvSpec pw{spec.in_ch, spec.out_ch, 1, 1, 1, 1, 0, spec.bias};
    alts.push_back({"DW",
                    {Conv1d::create(g.params, nd.id + ".DW.dw", dw, rng),
                     Conv1d::create(g.params, nd.id + ".DW.pw", pw, rng)}});

    const ActShape in = nd.inputs[0] == kGraphInput ? seed.input_shape : shapes[static_cast<std::size_t>(nd.inputs[0])];
    if (in == shapes[static_cast<std::size_t>(i)]) alts.push_back({"ID", {}});

    const double init = 1.0 / static_cast<double>(alts.size());
    const int theta = g.params.add(nd.id + ".theta", Tensor({static_cast<int>(alts.size())}, init), ParamRole::Arch);
    g.replace(i, std::make_unique<Choice>(theta, std::move(alts)));
    ++sites;
  }
  if (sites == 0) throw Error("seed has no convolution that can become a choice site");
  g.compact_params();
  (void)g.infer_shapes();
  g.meta["supernet"] = true;
  return g;
}

double expected_cost(const ModelGraph& g) {
  double total = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const Layer& l = *g.node(i).layer;
    if (const auto* c = dynamic_cast<const Choice*>(&l)) {
      const auto p = c->probabilities(g.params);
      const auto cost = c->alt_costs(g.params);
      for (std::size_t j = 0; j < p.size(); ++j) total += p[j] * cost[j];
    } else {
      total += static_cast<double>(l.param_count(g.params));
    }
  }
  return total;
}

double expected_cost_backward(ModelGraph& g, double scale) {
  for (int i = 0; i < g.size(); ++i) {
    const auto* c = dynamic_cast<const Choice*>(g.node(i).layer.get());
    if (c == nullptr) continue;
    const auto p = c->probabilities(g.params);
    const auto cost = c->alt_costs(g.params);
    std::vector<double> dp(cost.size());
    for (std::size_t j = 0; j < cost.size(); ++j) dp[j] = scale * cost[j];
    softmax_backward(p, dp, 1.0, param_grad(g.params, c->theta()));
  }
  return expected_cost(g);
}

ModelGraph extract_architecture(const ModelGraph& sn) {
  ModelGraph out;
  out.input_shape = sn.input_shape;
  out.meta = sn.meta;
  out.meta.erase("supernet");
  json record = json::array();
  std::vector<int> map(static_cast<std::size_t>(sn.size()), kGraphInput);
  auto mapped = [&](int s) { return s == kGraphInput ? kGraphInput : map[static_cast<std::size_t>(s)]; };

  for (int i = 0; i < sn.size(); ++i) {
    const Node& nd = sn.node(i);
    std::vector<int> ins;
    for (int s : nd.inputs) ins.push_back(mapped(s));
    const auto* choice = dynamic_cast<const Choice*>(nd.layer.get());
    if (choice == nullptr) {
      auto layer = nd.layer->clone();
      layer->remap(sn.params, out.params);
      map[static_cast<std::size_t>(i)] = out.add(nd.id, std::move(layer), ins);
      continue;
    }
    const int sel = choice->selected(sn.params);
    const Alternative& alt = choice->alternatives()[static_cast<std::size_t>(sel)];
    record.push_back({{"site", nd.id}, {"choice", alt.label}});
    if (alt.chain.empty()) {
      if (i == sn.output()) throw Error("identity selected at the output site '" + nd.id + "'");
      map[static_cast<std::size_t>(i)] = ins[0];
      continue;
    }
    int prev = ins[0];
    for (std::size_t e = 0; e < alt.chain.size(); ++e) {
      auto layer = alt.chain[e].clone();
      layer->remap(sn.params, out.params);
      const std::string id = alt.chain.size() == 1 ? nd.id : fmt::format("{}.{}", nd.id, e == 0 ? "dw" : "pw");
      prev = out.add(id, std::move(layer), {prev});
    }
    map[static_cast<std::size_t>(i)] = prev;
  }
  const int o = mapped(sn.output());
  if (o == kGraphInput) throw Error("extracted architecture degenerates to the identity map");
  out.set_output(o);
  // Nodes that no longer reach the output (none in practice) keep their parameters.
  out.meta["nas_choices"] = record;
  (void)out.infer_shapes();
  return out;
}

std::vector<ChoiceSummary> summarize_choices(const ModelGraph& g) {
  std::vector<ChoiceSummary> out;
  for (int i = 0; i < g.size(); ++i) {
    const auto* c = dynamic_cast<const Choice*>(g.node(i).layer.get());
    if (c == nullptr) continue;
    ChoiceSummary s;
    s.site = g.node(i).id;
    for (const auto& a : c->alternatives()) s.labels.push_back(a.label);
    s.probabilities = c->probabilities(g.params);
    s.selected = c->selected(g.params);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bpc
