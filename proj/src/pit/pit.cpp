// SPDX-License-Identifier: Apache-2.0
#include "pit/pit.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace bpc {

namespace {

constexpr const char* kMaskPrefix = "mask:";

struct ChannelRef {
  int space = -1;  // -1: never prunable
  int local = 0;
};

struct Space {
  int parent = 0;
  int size = 0;
  int period = 0;
  bool fixed = false;
  int owner = -1;  // node that created the space
};

/// Union-find over channel spaces, built by walking the graph once.
struct Plan {
  std::vector<Space> spaces;
  std::vector<std::vector<ChannelRef>> out;

  int root(int s) const {
    while (spaces[static_cast<std::size_t>(s)].parent != s) s = spaces[static_cast<std::size_t>(s)].parent;
    return s;
  }
  Space& at(int s) { return spaces[static_cast<std::size_t>(root(s))]; }
  const Space& at(int s) const { return spaces[static_cast<std::size_t>(root(s))]; }

  int make(int size, int period, int owner) {
    const int id = static_cast<int>(spaces.size());
    spaces.push_back(Space{id, size, period, false, owner});
    return id;
  }
  void unite(int a, int b) {
    const int ra = root(a), rb = root(b);
    if (ra == rb) return;
    Space& A = spaces[static_cast<std::size_t>(ra)];
    const Space& B = spaces[static_cast<std::size_t>(rb)];
    if (A.size != B.size) throw Error("cannot share a mask between spaces of different widths");
    A.period = std::gcd(A.period, B.period);
    A.fixed = A.fixed || B.fixed;
    spaces[static_cast<std::size_t>(rb)].parent = ra;
  }
  void fix(const std::vector<ChannelRef>& refs) {
    for (const auto& r : refs)
      if (r.space >= 0) at(r.space).fixed = true;
  }
};

/// Space id when `refs` is exactly channels 0..n-1 of one space, -1 when all
/// channels are fixed, and -2 otherwise.
int whole_space(const Plan& p, const std::vector<ChannelRef>& refs) {
  if (refs.empty()) return -1;
  if (std::all_of(refs.begin(), refs.end(), [](const ChannelRef& r) { return r.space < 0; })) return -1;
  const int s = refs[0].space;
  if (s < 0) return -2;
  for (std::size_t c = 0; c < refs.size(); ++c)
    if (refs[c].space < 0 || p.root(refs[c].space) != p.root(s) || refs[c].local != static_cast<int>(c)) return -2;
  if (p.at(s).size != static_cast<int>(refs.size())) return -2;
  return s;
}

Plan analyze(const ModelGraph& g) {
  Plan p;
  p.out.resize(static_cast<std::size_t>(g.size()));
  const std::vector<ChannelRef> input_refs(static_cast<std::size_t>(g.input_shape.channels));
  auto refs_of = [&](int s) -> const std::vector<ChannelRef>& {
    return s == kGraphInput ? input_refs : p.out[static_cast<std::size_t>(s)];
  };

  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    auto& out = p.out[static_cast<std::size_t>(i)];
    const auto& in0 = refs_of(nd.inputs[0]);
    switch (nd.layer->kind()) {
      case LayerKind::Conv1d:
      case LayerKind::Linear: {
        const auto& conv = static_cast<const Conv1d&>(*nd.layer);
        const ConvSpec& s = conv.spec();
        if (s.depthwise()) {
          out = in0;
          break;
        }
        if (s.groups > 1) {
          const int sp = whole_space(p, in0);
          if (sp == -2)
            throw Error(fmt::format("grouped convolution '{}' consumes a mixed channel set; cannot prune uniformly", nd.id));
          if (sp >= 0) p.at(sp).period = std::gcd(p.at(sp).period, s.in_ch / s.groups);
        }
        const int sp = p.make(s.out_ch, s.out_ch / s.groups, i);
        out.resize(static_cast<std::size_t>(s.out_ch));
        for (int c = 0; c < s.out_ch; ++c) out[static_cast<std::size_t>(c)] = {sp, c};
        break;
      }
      case LayerKind::BatchNorm1d:
      case LayerKind::InstanceNorm1d:
      case LayerKind::ReLU:
      case LayerKind::PReLU:
      case LayerKind::MaxPool1d:
      case LayerKind::AvgPool1d:
      case LayerKind::Upsample:
      case LayerKind::Identity:
      case LayerKind::ActQuant:
        out = in0;
        break;
      case LayerKind::Add: {
        std::vector<int> ops;
        bool any_fixed = false;
        for (int s : nd.inputs) {
          const int sp = whole_space(p, refs_of(s));
          if (sp == -2) throw Error(fmt::format("add '{}' has an operand that mixes channel spaces", nd.id));
          if (sp == -1)
            any_fixed = true;
          else
            ops.push_back(sp);
        }
        for (std::size_t k = 1; k < ops.size(); ++k) p.unite(ops[0], ops[k]);
        if (any_fixed) {
          for (int sp : ops) p.at(sp).fixed = true;
          out.assign(in0.size(), ChannelRef{});
        } else {
          out = in0;
        }
        break;
      }
      case LayerKind::Concat:
        for (int s : nd.inputs) {
          const auto& r = refs_of(s);
          out.insert(out.end(), r.begin(), r.end());
        }
        break;
      case LayerKind::Choice:
        throw Error(fmt::format("node '{}' ({}) is not supported by channel pruning", nd.id,
                                kind_name(nd.layer->kind())));
    }
  }
  if (g.size() > 0) p.fix(p.out[static_cast<std::size_t>(g.output())]);
  return p;
}

std::string mask_name(const ModelGraph& g, const Plan& p, int space) {
  return kMaskPrefix + g.node(p.at(space).owner).id;
}

GateRef resolve(const ModelGraph& g, const Plan& p, const ChannelRef& r) {
  if (r.space < 0 || p.at(r.space).fixed) return {};
  const int param = g.params.find(mask_name(g, p, r.space));
  if (param < 0) return {};
  return {param, r.local % p.at(r.space).period};
}

bool gateable(const Layer& l) {
  switch (l.kind()) {
    case LayerKind::Conv1d:
    case LayerKind::Linear:
    case LayerKind::BatchNorm1d:
    case LayerKind::InstanceNorm1d:
      return true;
    default:
      return false;
  }
}

ChannelGate* gate_of(Layer& l) {
  if (auto* c = dynamic_cast<Conv1d*>(&l)) return &c->gate;
  if (auto* n = dynamic_cast<Norm1d*>(&l)) return &n->gate;
  return nullptr;
}

double gate_value(const ParamStore& ps, const GateRef& r) {
  return r.param < 0 ? 1.0 : heaviside(ps.value(r.param)[static_cast<std::size_t>(r.slot)]);
}

/// Shared walk for mask_cost and its gradient. `dm` (optional) receives
/// d(cost)/d(gate) per node and channel.
double cost_walk(const ModelGraph& g, const std::vector<std::vector<GateRef>>& gates,
                 std::vector<std::vector<double>>* dm_out, std::vector<double>* dm_input) {
  const ParamStore& ps = g.params;
  std::vector<std::vector<double>> m(gates.size());
  for (std::size_t i = 0; i < gates.size(); ++i)
    for (const auto& r : gates[i]) m[i].push_back(gate_value(ps, r));
  const std::vector<double> ones(static_cast<std::size_t>(g.input_shape.channels), 1.0);
  if (dm_out) {
    dm_out->assign(gates.size(), {});
    for (std::size_t i = 0; i < gates.size(); ++i) (*dm_out)[i].assign(gates[i].size(), 0.0);
  }
  if (dm_input) dm_input->assign(ones.size(), 0.0);

  double total = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    const auto iu = static_cast<std::size_t>(i);
    const auto& mo = m[iu];
    const int src = nd.inputs[0];
    const auto& mi = src == kGraphInput ? ones : m[static_cast<std::size_t>(src)];
    std::vector<double>* dmo = dm_out ? &(*dm_out)[iu] : nullptr;
    std::vector<double>* dmi =
        dm_out ? (src == kGraphInput ? dm_input : &(*dm_out)[static_cast<std::size_t>(src)]) : nullptr;

    switch (nd.layer->kind()) {
      case LayerKind::Conv1d:
      case LayerKind::Linear: {
        const auto& conv = static_cast<const Conv1d&>(*nd.layer);
        const ConvSpec& s = conv.spec();
        const double k = s.kernel;
        const double has_bias = conv.bias() >= 0 ? 1.0 : 0.0;
        if (s.depthwise()) {
          for (std::size_t c = 0; c < mo.size(); ++c) {
            total += (k + has_bias) * mo[c];
            if (dmo) (*dmo)[c] += k + has_bias;
          }
          break;
        }
        const int cpg_in = s.in_ch / s.groups, cpg_out = s.out_ch / s.groups;
        for (int gi = 0; gi < s.groups; ++gi) {
          double s_in = 0.0, s_out = 0.0;
          for (int c = 0; c < cpg_in; ++c) s_in += mi[static_cast<std::size_t>(gi * cpg_in + c)];
          for (int o = 0; o < cpg_out; ++o) s_out += mo[static_cast<std::size_t>(gi * cpg_out + o)];
          total += k * s_out * s_in + has_bias * s_out;
          if (dmo)
            for (int o = 0; o < cpg_out; ++o) (*dmo)[static_cast<std::size_t>(gi * cpg_out + o)] += k * s_in + has_bias;
          if (dmi)
            for (int c = 0; c < cpg_in; ++c) (*dmi)[static_cast<std::size_t>(gi * cpg_in + c)] += k * s_out;
        }
        break;
      }
      case LayerKind::BatchNorm1d:
      case LayerKind::InstanceNorm1d:
      case LayerKind::PReLU: {
        const double per = nd.layer->kind() == LayerKind::PReLU ? 1.0 : 2.0;
        for (std::size_t c = 0; c < mo.size(); ++c) {
          total += per * mo[c];
          if (dmo) (*dmo)[c] += per;
        }
        break;
      }
      default:
        total += static_cast<double>(nd.layer->param_count(ps));
        break;
    }
  }
  return total;
}

Tensor slice_vector(const Tensor& t, const std::vector<int>& keep) {
  std::vector<double> v;
  for (int k : keep) v.push_back(t[static_cast<std::size_t>(k)]);
  return Tensor({static_cast<int>(keep.size())}, std::move(v));
}

}  // namespace

std::vector<std::vector<GateRef>> channel_gates(const ModelGraph& g) {
  const Plan p = analyze(g);
  std::vector<std::vector<GateRef>> out(p.out.size());
  for (std::size_t i = 0; i < p.out.size(); ++i)
    for (const auto& r : p.out[i]) out[i].push_back(resolve(g, p, r));
  return out;
}

void attach_masks(ModelGraph& g) {
  const Plan p = analyze(g);
  for (int s = 0; s < static_cast<int>(p.spaces.size()); ++s) {
    if (p.root(s) != s || p.spaces[static_cast<std::size_t>(s)].fixed) continue;
    const std::string name = mask_name(g, p, s);
    if (g.params.find(name) >= 0) throw Error("masks already attached ('" + name + "' exists)");
    g.params.add(name, Tensor({p.spaces[static_cast<std::size_t>(s)].period}, 1.0), ParamRole::Arch);
  }
  for (int i = 0; i < g.size(); ++i) {
    Layer& l = *g.node(i).layer;
    if (!gateable(l)) continue;
    ChannelGate gate;
    for (const auto& r : p.out[static_cast<std::size_t>(i)]) {
      const GateRef gr = resolve(g, p, r);
      gate.param.push_back(gr.param);
      gate.slot.push_back(gr.slot);
    }
    *gate_of(l) = gate.active() ? gate : ChannelGate{};
  }
  g.meta["pit_masks"] = true;
}

std::vector<int> mask_params(const ModelGraph& g) {
  std::vector<int> out;
  for (int i = 0; i < g.params.size(); ++i)
    if (g.params.at(i).name.rfind(kMaskPrefix, 0) == 0) out.push_back(i);
  return out;
}

double mask_cost(const ModelGraph& g) { return cost_walk(g, channel_gates(g), nullptr, nullptr); }

double mask_cost_backward(ModelGraph& g, double scale) {
  const auto gates = channel_gates(g);
  std::vector<std::vector<double>> dm;
  std::vector<double> dm_input;
  const double total = cost_walk(g, gates, &dm, &dm_input);
  for (std::size_t i = 0; i < gates.size(); ++i)
    for (std::size_t c = 0; c < gates[i].size(); ++c) {
      const GateRef& r = gates[i][c];
      if (r.param < 0 || dm[i][c] == 0.0) continue;
      const double t = g.params.value(r.param)[static_cast<std::size_t>(r.slot)];
      param_grad(g.params, r.param)[static_cast<std::size_t>(r.slot)] += scale * dm[i][c] * ste_grad(t);
    }
  return total;
}

int clamp_masks(ModelGraph& g) {
  int fixed = 0;
  for (int idx : mask_params(g)) {
    auto th = g.params.value(idx).data();
    if (std::any_of(th.begin(), th.end(), [](double v) { return heaviside(v) == 1.0; })) continue;
    const auto best = std::max_element(th.begin(), th.end());
    spdlog::warn("mask '{}' pruned every channel; keeping slot {}", g.params.at(idx).name, best - th.begin());
    *best = 0.5;
    ++fixed;
  }
  return fixed;
}

ModelGraph export_pruned(const ModelGraph& g) {
  const auto gates = channel_gates(g);
  std::vector<std::vector<int>> keep(gates.size());
  for (std::size_t i = 0; i < gates.size(); ++i)
    for (std::size_t c = 0; c < gates[i].size(); ++c)
      if (gate_value(g.params, gates[i][c]) == 1.0) keep[i].push_back(static_cast<int>(c));
  std::vector<int> input_keep(static_cast<std::size_t>(g.input_shape.channels));
  std::iota(input_keep.begin(), input_keep.end(), 0);

  ModelGraph out;
  out.input_shape = g.input_shape;
  out.meta = g.meta;
  out.meta.erase("pit_masks");
  nlohmann::json record = nlohmann::json::array();
  const ParamStore& ps = g.params;
  auto copy_param = [&](int idx, Tensor value) {
    if (idx < 0) return -1;
    const Param& p = ps.at(idx);
    return out.params.add(p.name, std::move(value), p.role, p.weight_decay);
  };

  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    const auto& ko = keep[static_cast<std::size_t>(i)];
    if (ko.empty()) throw Error(fmt::format("node '{}' lost every channel; clamp masks before export", nd.id));
    const auto& ki = nd.inputs[0] == kGraphInput ? input_keep : keep[static_cast<std::size_t>(nd.inputs[0])];
    std::unique_ptr<Layer> layer;

    switch (nd.layer->kind()) {
      case LayerKind::Conv1d:
      case LayerKind::Linear: {
        const auto& conv = static_cast<const Conv1d&>(*nd.layer);
        const ConvSpec& s = conv.spec();
        const Tensor& w = ps.value(conv.weight());
        ConvSpec ns = s;
        std::vector<double> wv;
        const int kk = s.kernel;
        if (s.depthwise()) {
          ns.in_ch = ns.out_ch = ns.groups = static_cast<int>(ko.size());
          for (int c : ko)
            for (int k = 0; k < kk; ++k) wv.push_back(w[static_cast<std::size_t>(c) * kk + k]);
        } else {
          const int cpg_in = s.in_ch / s.groups, cpg_out = s.out_ch / s.groups;
          std::vector<std::vector<int>> in_by_group(static_cast<std::size_t>(s.groups));
          for (int c : ki) in_by_group[static_cast<std::size_t>(c / cpg_in)].push_back(c % cpg_in);
          std::vector<int> out_per_group(static_cast<std::size_t>(s.groups), 0);
          for (int o : ko) ++out_per_group[static_cast<std::size_t>(o / cpg_out)];
          for (int gi = 1; gi < s.groups; ++gi)
            if (in_by_group[static_cast<std::size_t>(gi)].size() != in_by_group[0].size() ||
                out_per_group[static_cast<std::size_t>(gi)] != out_per_group[0])
              throw Error(fmt::format("pruning of grouped convolution '{}' is not uniform across groups", nd.id));
          ns.in_ch = static_cast<int>(ki.size());
          ns.out_ch = static_cast<int>(ko.size());
          for (int o : ko)
            for (int c : in_by_group[static_cast<std::size_t>(o / cpg_out)])
              for (int k = 0; k < kk; ++k)
                wv.push_back(w[(static_cast<std::size_t>(o) * cpg_in + c) * kk + k]);
        }
        const int wi = copy_param(conv.weight(), Tensor({ns.out_ch, ns.in_ch / ns.groups, kk}, std::move(wv)));
        const int bi = conv.bias() >= 0 ? copy_param(conv.bias(), slice_vector(ps.value(conv.bias()), ko)) : -1;
        auto nc = std::make_unique<Conv1d>(ns, wi, bi, conv.is_linear());
        if (conv.wq) {
          nc->wq = conv.wq;
          if (conv.wq->theta >= 0) nc->wq->theta = out.params.import(ps, conv.wq->theta);
        }
        layer = std::move(nc);
        if (!s.depthwise())
          record.push_back({{"node", nd.id}, {"kept", ko.size()}, {"total", s.out_ch}});
        break;
      }
      case LayerKind::BatchNorm1d:
      case LayerKind::InstanceNorm1d: {
        const auto& n = static_cast<const Norm1d&>(*nd.layer);
        layer = std::make_unique<Norm1d>(
            n.instance(), copy_param(n.gamma(), slice_vector(ps.value(n.gamma()), ko)),
            copy_param(n.beta(), slice_vector(ps.value(n.beta()), ko)),
            copy_param(n.running_mean(), slice_vector(ps.value(n.running_mean()), ko)),
            copy_param(n.running_var(), slice_vector(ps.value(n.running_var()), ko)), n.eps(), 0.1,
            n.tracks_running());
        break;
      }
      case LayerKind::PReLU: {
        const auto& pr = static_cast<const PReLU&>(*nd.layer);
        layer = std::make_unique<PReLU>(copy_param(pr.slope(), slice_vector(ps.value(pr.slope()), ko)));
        break;
      }
      default:
        layer = nd.layer->clone();
        layer->remap(ps, out.params);
        break;
    }
    out.add(nd.id, std::move(layer), nd.inputs);
  }
  out.set_output(g.output());
  out.meta["pit_kept"] = record;
  (void)out.infer_shapes();
  return out;
}

std::vector<MaskSummary> summarize_masks(const ModelGraph& g) {
  const auto gates = channel_gates(g);
  std::vector<MaskSummary> out;
  for (int i = 0; i < g.size(); ++i) {
    const auto* conv = dynamic_cast<const Conv1d*>(g.node(i).layer.get());
    if (conv == nullptr || conv->spec().depthwise()) continue;
    MaskSummary s{g.node(i).id, 0, static_cast<int>(gates[static_cast<std::size_t>(i)].size())};
    for (const auto& r : gates[static_cast<std::size_t>(i)]) s.kept += gate_value(g.params, r) == 1.0 ? 1 : 0;
    out.push_back(s);
  }
  return out;
}

}  // namespace bpc
