// SPDX-License-Identifier: Apache-2.0
#include "intrt/int_runtime.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

namespace bpc {

namespace {

/// Activation flowing between nodes: codes with a step, or real values.
struct Value {
  Shape shape;
  bool coded = false;
  std::vector<std::int32_t> codes;
  std::vector<double> real;
  double scale = 0.0;

  std::size_t size() const { return shape_numel(shape); }
  double at(std::size_t i) const { return coded ? static_cast<double>(codes[i]) * scale : real[i]; }
  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int l() const { return shape[2]; }
};

Value make_real(Shape s) {
  Value v;
  v.shape = std::move(s);
  v.real.assign(v.size(), 0.0);
  return v;
}

std::size_t idx(const Value& v, int n, int c, int l) {
  return (static_cast<std::size_t>(n) * v.c() + c) * v.l() + l;
}

std::int32_t checked_i32(std::int64_t v, const std::string& id) {
  if (v > std::numeric_limits<std::int32_t>::max() || v < std::numeric_limits<std::int32_t>::min())
    throw Error(fmt::format("int32 accumulator overflow in '{}'", id));
  return static_cast<std::int32_t>(v);
}

Value run_conv(const QuantizedModel& m, const QLayer& l, const Value& x) {
  if (!x.coded) throw Error(fmt::format("layer '{}' received an unquantized activation", l.id));
  if (x.scale != l.scale_x)
    throw Error(fmt::format("scale mismatch at '{}': input step {} but layer expects {}", l.id, x.scale, l.scale_x));
  const ConvSpec& s = l.spec;
  if (x.c() != s.in_ch) throw Error(fmt::format("layer '{}' expects {} channels, got {}", l.id, s.in_ch, x.c()));
  const std::size_t li = static_cast<std::size_t>(&l - m.layers.data());
  const auto wcodes = m.weight_codes(li);
  const AffineConvTerms terms = affine_conv_terms(l.grid(), l.scale_x);
  const int len = x.l(), lo = s.out_length(len);
  const int cpg_in = s.in_ch / s.groups, cpg_out = s.out_ch / s.groups;
  Value y = make_real({x.n(), s.out_ch, lo});
  std::vector<std::int32_t> acc(static_cast<std::size_t>(lo)), sum_x(static_cast<std::size_t>(lo));

  auto t_range = [&](int off) {
    const int t0 = off < 0 ? (-off + s.stride - 1) / s.stride : 0;
    const int t1 = (len - 1 - off) < 0 ? 0 : std::min(lo, (len - 1 - off) / s.stride + 1);
    return std::pair{t0, t1};
  };

  for (int n = 0; n < x.n(); ++n)
    for (int g = 0; g < s.groups; ++g) {
      std::fill(sum_x.begin(), sum_x.end(), 0);
      for (int c = 0; c < cpg_in; ++c)
        for (int k = 0; k < s.kernel; ++k) {
          const int off = k * s.dilation - s.pad;
          const auto [t0, t1] = t_range(off);
          for (int t = t0; t < t1; ++t)
            sum_x[static_cast<std::size_t>(t)] += x.codes[idx(x, n, g * cpg_in + c, t * s.stride + off)];
        }
      for (int oo = 0; oo < cpg_out; ++oo) {
        const int o = g * cpg_out + oo;
        std::fill(acc.begin(), acc.end(), 0);
        for (int c = 0; c < cpg_in; ++c)
          for (int k = 0; k < s.kernel; ++k) {
            const auto wv = static_cast<std::int64_t>(wcodes[(static_cast<std::size_t>(o) * cpg_in + c) * s.kernel + k]);
            const int off = k * s.dilation - s.pad;
            const auto [t0, t1] = t_range(off);
            for (int t = t0; t < t1; ++t) {
              auto& a = acc[static_cast<std::size_t>(t)];
              a = checked_i32(a + wv * x.codes[idx(x, n, g * cpg_in + c, t * s.stride + off)], l.id);
            }
          }
        const std::int32_t b_int = l.has_bias ? m.biases.at(l.bias_offset + static_cast<std::size_t>(o)) : 0;
        for (int t = 0; t < lo; ++t)
          y.real[idx(y, n, o, t)] =
              affine_conv_output(terms, acc[static_cast<std::size_t>(t)], sum_x[static_cast<std::size_t>(t)], b_int);
      }
    }
  return y;
}

Value run_actquant(const QNode& nd, const Value& x) {
  Value y;
  y.shape = x.shape;
  y.coded = true;
  y.scale = pact_scale(nd.alpha, nd.bits);
  y.codes.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y.codes[i] = pact_code(x.at(i), nd.alpha, nd.bits);
  return y;
}

Value run_relu(const Value& x) {
  Value y = x;
  if (y.coded)
    for (auto& c : y.codes) c = std::max(c, 0);
  else
    for (double& v : y.real) v = v > 0.0 ? v : 0.0;
  return y;
}

Value run_pool(const QNode& nd, const Value& x) {
  const bool is_max = nd.kind == LayerKind::MaxPool1d;
  const int lo = (x.l() - nd.kernel) / nd.stride + 1;
  Value y;
  y.shape = {x.n(), x.c(), lo};
  y.coded = is_max && x.coded;
  y.scale = y.coded ? x.scale : 0.0;
  if (y.coded)
    y.codes.resize(y.size());
  else
    y.real.resize(y.size());
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int t = 0; t < lo; ++t, ++o) {
        const int base = t * nd.stride;
        if (is_max) {
          int best = base;
          for (int k = 1; k < nd.kernel; ++k) {
            const std::size_t a = idx(x, n, c, base + k), b = idx(x, n, c, best);
            if (x.coded ? x.codes[a] > x.codes[b] : x.real[a] > x.real[b]) best = base + k;
          }
          if (y.coded)
            y.codes[o] = x.codes[idx(x, n, c, best)];
          else
            y.real[o] = x.real[idx(x, n, c, best)];
        } else {
          double s = 0.0;
          for (int k = 0; k < nd.kernel; ++k) s += x.at(idx(x, n, c, base + k));
          y.real[o] = s / nd.kernel;
        }
      }
  return y;
}

Value run_upsample(const QNode& nd, const Value& x) {
  Value y;
  y.shape = {x.n(), x.c(), x.l() * nd.factor};
  y.coded = x.coded;
  y.scale = x.scale;
  if (y.coded)
    y.codes.resize(y.size());
  else
    y.real.resize(y.size());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int t = 0; t < y.l(); ++t) {
        const std::size_t d = idx(y, n, c, t), s = idx(x, n, c, t / nd.factor);
        if (y.coded)
          y.codes[d] = x.codes[s];
        else
          y.real[d] = x.real[s];
      }
  return y;
}

Value run_add(const std::vector<const Value*>& in) {
  Value y = make_real(in[0]->shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.real[i] = in[0]->at(i);
  for (std::size_t k = 1; k < in.size(); ++k) {
    if (in[k]->shape != y.shape) throw Error("add operands disagree in shape");
    for (std::size_t i = 0; i < y.size(); ++i) y.real[i] += in[k]->at(i);
  }
  return y;
}

Value run_concat(const std::vector<const Value*>& in) {
  int ch = 0;
  for (const Value* v : in) ch += v->c();
  Value y = make_real({in[0]->n(), ch, in[0]->l()});
  for (int n = 0; n < y.n(); ++n) {
    int off = 0;
    for (const Value* v : in) {
      for (int c = 0; c < v->c(); ++c)
        for (int l = 0; l < y.l(); ++l) y.real[idx(y, n, off + c, l)] = v->at(idx(*v, n, c, l));
      off += v->c();
    }
  }
  return y;
}

}  // namespace

IntTensor quantize_input(const QuantizedModel& m, const Tensor& x) {
  const QNode* q = nullptr;
  for (const auto& nd : m.nodes)
    if (nd.kind == LayerKind::ActQuant && nd.inputs.size() == 1 && nd.inputs[0] == kGraphInput) q = &nd;
  if (q == nullptr) throw Error("model has no input quantizer");
  if (x.rank() != 3 || x.dim(1) != m.input_shape.channels || x.dim(2) != m.input_shape.length)
    throw Error(fmt::format("input shape {} does not match the model ({}, {})", shape_str(x.shape()),
                            m.input_shape.channels, m.input_shape.length));
  IntTensor t;
  t.shape = x.shape();
  t.scale = pact_scale(q->alpha, q->bits);
  t.codes.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t.codes[i] = pact_code(x[i], q->alpha, q->bits);
  return t;
}

Tensor int_forward(const QuantizedModel& m, const IntTensor& x) {
  if (m.nodes.empty()) throw Error("empty quantized model");
  Value input;
  input.shape = x.shape;
  input.coded = true;
  input.codes = x.codes;
  input.scale = x.scale;
  std::vector<Value> vals(m.nodes.size());
  auto get = [&](int s) -> const Value& { return s == kGraphInput ? input : vals[static_cast<std::size_t>(s)]; };

  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    const QNode& nd = m.nodes[i];
    std::vector<const Value*> in;
    for (int s : nd.inputs) in.push_back(&get(s));
    switch (nd.kind) {
      case LayerKind::Conv1d:
      case LayerKind::Linear:
        vals[i] = run_conv(m, m.layers.at(static_cast<std::size_t>(nd.layer)), *in[0]);
        break;
      case LayerKind::ActQuant:
        vals[i] = run_actquant(nd, *in[0]);
        break;
      case LayerKind::ReLU:
        vals[i] = run_relu(*in[0]);
        break;
      case LayerKind::MaxPool1d:
      case LayerKind::AvgPool1d:
        vals[i] = run_pool(nd, *in[0]);
        break;
      case LayerKind::Upsample:
        vals[i] = run_upsample(nd, *in[0]);
        break;
      case LayerKind::Add:
        vals[i] = run_add(in);
        break;
      case LayerKind::Concat:
        vals[i] = run_concat(in);
        break;
      case LayerKind::Identity:
        vals[i] = *in[0];
        break;
      default:
        throw Error(fmt::format("node '{}' ({}) is not supported by the integer runtime", nd.id, kind_name(nd.kind)));
    }
  }
  const Value& out = vals.at(static_cast<std::size_t>(m.output < 0 ? static_cast<int>(m.nodes.size()) - 1 : m.output));
  Tensor y(out.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = out.at(i);
  return y;
}

}  // namespace bpc
