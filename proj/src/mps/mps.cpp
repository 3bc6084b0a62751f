// SPDX-License-Identifier: Apache-2.0
#include "mps/mps.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "core/fold.hpp"
#include "core/softmax.hpp"
#include "intrt/packing.hpp"

namespace bpc {

namespace {

bool quantize_output(const ModelGraph& g, int i) {
  if (i == g.output()) return false;
  switch (g.node(i).layer->kind()) {
    case LayerKind::Conv1d:
    case LayerKind::Linear:
    case LayerKind::Add:
    case LayerKind::Concat:
    case LayerKind::AvgPool1d:
      return true;
    default:
      return false;
  }
}

Conv1d* as_conv(Layer& l) { return dynamic_cast<Conv1d*>(&l); }

/// Step of each node's output as the float graph propagates it (0 = real-valued).
std::vector<double> static_scales(const ModelGraph& g) {
  std::vector<double> s(static_cast<std::size_t>(g.size()), 0.0);
  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    const double in = nd.inputs[0] == kGraphInput ? 0.0 : s[static_cast<std::size_t>(nd.inputs[0])];
    switch (nd.layer->kind()) {
      case LayerKind::ActQuant: {
        const auto& q = static_cast<const ActQuant&>(*nd.layer);
        s[static_cast<std::size_t>(i)] = pact_scale(g.params.value(q.alpha())[0], q.bits());
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::MaxPool1d:
      case LayerKind::Upsample:
      case LayerKind::Identity:
        s[static_cast<std::size_t>(i)] = in;
        break;
      default:
        break;
    }
  }
  return s;
}

}  // namespace

ModelGraph prepare_for_quant(const ModelGraph& src, const QuantPrepOptions& opts) {
  ModelGraph g = src;
  fold_norms(g);
  norms_to_depthwise(g);
  for (int i = 0; i < g.size(); ++i)
    if (g.node(i).layer->kind() == LayerKind::PReLU) g.replace(i, std::make_unique<ReLU>());
  g.compact_params();

  ModelGraph out;
  out.input_shape = g.input_shape;
  out.meta = g.meta;
  out.params = g.params;
  auto add_quant = [&](const std::string& id, int from) {
    const int a = out.params.add(id + ".alpha", Tensor({1}, opts.alpha_init), ParamRole::Weight, opts.alpha_decay);
    return out.add(id, std::make_unique<ActQuant>(a, opts.act_bits), {from});
  };
  const int in_q = add_quant("input.aq", kGraphInput);
  std::vector<int> map(static_cast<std::size_t>(g.size()));
  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    if (nd.layer->kind() == LayerKind::ActQuant) throw Error("graph already carries activation quantizers");
    std::vector<int> ins;
    for (int s : nd.inputs) ins.push_back(s == kGraphInput ? in_q : map[static_cast<std::size_t>(s)]);
    int j = out.add(nd.id, nd.layer->clone(), ins);
    if (i == g.output()) out.set_output(j);
    if (quantize_output(g, i)) j = add_quant(nd.id + ".aq", j);
    map[static_cast<std::size_t>(i)] = j;
  }
  (void)out.infer_shapes();
  out.meta["quant_ready"] = true;
  return out;
}

void attach_bit_search(ModelGraph& g, const std::vector<int>& bits) {
  if (bits.empty()) throw Error("empty precision set");
  for (int i = 0; i < g.size(); ++i) {
    Conv1d* c = as_conv(*g.node(i).layer);
    if (c == nullptr) continue;
    if (c->wq) throw Error(fmt::format("layer '{}' already has a precision search", g.node(i).id));
    WeightQuant wq;
    wq.bits = bits;
    if (bits.size() == 1) {
      wq.frozen = bits[0];
    } else {
      wq.theta = g.params.add(g.node(i).id + ".bits_theta", Tensor({static_cast<int>(bits.size())}, 0.0),
                              ParamRole::Arch);
    }
    c->wq = wq;
  }
}

double tau_schedule(int epoch) { return 5.0 * std::exp(-0.0045 * epoch); }

double bit_cost(const ModelGraph& g, double tau) {
  double total = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const Conv1d* c = as_conv(*g.node(i).layer);
    if (c == nullptr) continue;
    const double n = static_cast<double>(c->param_count(g.params));
    if (!c->wq) {
      total += 32.0 * n;
    } else if (c->wq->frozen > 0 || c->wq->theta < 0) {
      total += n * (c->wq->frozen > 0 ? c->wq->frozen : c->wq->bits.at(0));
    } else {
      const auto mix = c->bit_mix(g.params, tau);
      double e = 0.0;
      for (std::size_t p = 0; p < mix.size(); ++p) e += mix[p] * c->wq->bits[p];
      total += n * e;
    }
  }
  return total;
}

double bit_cost_backward(ModelGraph& g, double scale, double tau) {
  for (int i = 0; i < g.size(); ++i) {
    const Conv1d* c = as_conv(*g.node(i).layer);
    if (c == nullptr || !c->wq || c->wq->frozen > 0 || c->wq->theta < 0) continue;
    const double n = static_cast<double>(c->param_count(g.params));
    const auto mix = c->bit_mix(g.params, tau);
    std::vector<double> dmix(mix.size());
    for (std::size_t p = 0; p < mix.size(); ++p) dmix[p] = scale * n * c->wq->bits[p];
    softmax_backward(mix, dmix, tau, param_grad(g.params, c->wq->theta));
  }
  return bit_cost(g, tau);
}

void freeze_precision(ModelGraph& g) {
  for (int i = 0; i < g.size(); ++i) {
    Conv1d* c = as_conv(*g.node(i).layer);
    if (c == nullptr || !c->wq || c->wq->frozen > 0) continue;
    c->wq->frozen = c->wq->bits.at(static_cast<std::size_t>(argmax_first(g.params.value(c->wq->theta).data())));
  }
}

std::vector<LayerPrecision> summarize_precision(const ModelGraph& g, double tau) {
  std::vector<LayerPrecision> out;
  for (int i = 0; i < g.size(); ++i) {
    const Conv1d* c = as_conv(*g.node(i).layer);
    if (c == nullptr || !c->wq) continue;
    LayerPrecision p;
    p.id = g.node(i).id;
    p.params = c->param_count(g.params);
    if (c->wq->frozen > 0) {
      p.bits = c->wq->frozen;
    } else if (c->wq->theta >= 0) {
      p.mix = c->bit_mix(g.params, tau);
      p.bits = c->wq->bits.at(static_cast<std::size_t>(argmax_first(p.mix)));
    }
    out.push_back(std::move(p));
  }
  return out;
}

QuantizedModel export_quantized(const ModelGraph& g) {
  QuantizedModel m;
  m.input_shape = g.input_shape;
  m.output = g.output();
  m.meta = g.meta;
  const auto scales = static_scales(g);
  const auto consumers_of = [&](int i) { return g.consumers(i); };

  for (int i = 0; i < g.size(); ++i) {
    const Node& nd = g.node(i);
    QNode q;
    q.id = nd.id;
    q.kind = nd.layer->kind();
    q.inputs = nd.inputs;
    switch (q.kind) {
      case LayerKind::Conv1d:
      case LayerKind::Linear: {
        const auto& c = static_cast<const Conv1d&>(*nd.layer);
        if (!c.wq || c.wq->frozen == 0)
          throw Error(fmt::format("layer '{}' has no frozen precision; freeze before export", nd.id));
        if (c.gate.active()) throw Error(fmt::format("layer '{}' still carries pruning gates", nd.id));
        const int src = nd.inputs[0];
        const double sx = src == kGraphInput ? 0.0 : scales[static_cast<std::size_t>(src)];
        if (sx <= 0.0) throw Error(fmt::format("input of layer '{}' is not quantized", nd.id));
        const auto w = g.params.value(c.weight()).data();
        const AffineGrid grid = minmax_grid(w, c.wq->frozen);
        QLayer l;
        l.id = nd.id;
        l.kind = q.kind;
        l.spec = c.spec();
        l.spec.bias = c.bias() >= 0;
        l.bits_w = c.wq->frozen;
        l.min_w = grid.min;
        l.max_w = grid.max;
        l.scale_w = grid.scale;
        l.zp_w = grid.degenerate() ? 0.0 : -grid.min / grid.scale;
        l.scale_x = sx;
        l.alpha = sx * static_cast<double>(-pact_qmin(8));
        for (int s = src; s != kGraphInput;) {
          const Layer& up = *g.node(s).layer;
          if (up.kind() == LayerKind::ActQuant) {
            l.alpha = g.params.value(static_cast<const ActQuant&>(up).alpha())[0];
            break;
          }
          s = g.node(s).inputs[0];
        }
        for (int k : consumers_of(i))
          if (g.node(k).layer->kind() == LayerKind::ActQuant) l.scale_out = scales[static_cast<std::size_t>(k)];

        std::vector<std::uint32_t> codes(w.size());
        for (std::size_t j = 0; j < w.size(); ++j) codes[j] = static_cast<std::uint32_t>(grid.code(w[j]));
        const PackedWeights pw = pack(codes, l.bits_w);
        l.weight_offset = m.weights.size();
        l.weight_count = w.size();
        m.weights.insert(m.weights.end(), pw.bytes.begin(), pw.bytes.end());

        const AffineConvTerms terms = affine_conv_terms(grid, sx);
        l.has_bias = c.bias() >= 0;
        l.bias_offset = m.biases.size();
        if (l.has_bias)
          for (double b : g.params.value(c.bias()).data()) {
            const double r = round_half_away(b / terms.b_step);
            if (std::abs(r) > std::numeric_limits<std::int32_t>::max())
              throw Error(fmt::format("bias of '{}' overflows int32", nd.id));
            m.biases.push_back(static_cast<std::int32_t>(r));
          }

        // Worst-case accumulator magnitude must fit in int32.
        const double fan_in = static_cast<double>(c.spec().in_ch / c.spec().groups) * c.spec().kernel;
        if (fan_in * grid.levels() * 128.0 > static_cast<double>(std::numeric_limits<std::int32_t>::max()))
          throw Error(fmt::format("layer '{}' may overflow a 32-bit accumulator", nd.id));
        q.layer = static_cast<int>(m.layers.size());
        m.layers.push_back(l);
        break;
      }
      case LayerKind::ActQuant: {
        const auto& a = static_cast<const ActQuant&>(*nd.layer);
        q.alpha = g.params.value(a.alpha())[0];
        q.bits = a.bits();
        break;
      }
      case LayerKind::MaxPool1d:
      case LayerKind::AvgPool1d: {
        const auto& p = static_cast<const Pool1d&>(*nd.layer);
        q.kernel = p.kernel();
        q.stride = p.stride();
        break;
      }
      case LayerKind::Upsample:
        q.factor = static_cast<const Upsample&>(*nd.layer).factor();
        break;
      case LayerKind::ReLU:
      case LayerKind::Add:
      case LayerKind::Concat:
      case LayerKind::Identity:
        break;
      default:
        throw Error(fmt::format("node '{}' ({}) cannot be exported to the integer format", nd.id,
                                kind_name(q.kind)));
    }
    m.nodes.push_back(std::move(q));
  }
  return m;
}

}  // namespace bpc
