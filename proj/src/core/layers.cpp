// SPDX-License-Identifier: Apache-2.0
#include "core/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <fmt/format.h>

#include "core/quant_math.hpp"
#include "core/softmax.hpp"

namespace bpc {

using nlohmann::json;

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv1d, "conv1d"},       {LayerKind::Linear, "linear"},
    {LayerKind::ReLU, "relu"},           {LayerKind::PReLU, "prelu"},
    {LayerKind::BatchNorm1d, "batchnorm1d"}, {LayerKind::InstanceNorm1d, "instancenorm1d"},
    {LayerKind::MaxPool1d, "maxpool1d"}, {LayerKind::AvgPool1d, "avgpool1d"},
    {LayerKind::Upsample, "upsample"},   {LayerKind::Add, "add"},
    {LayerKind::Concat, "concat"},       {LayerKind::Identity, "identity"},
    {LayerKind::Choice, "choice"},       {LayerKind::ActQuant, "actquant"},
};

void require_arity(std::span<const ActShape> in, std::size_t n, LayerKind k) {
  if (in.size() != n)
    throw Error(fmt::format("{} expects {} input(s), got {}", kind_name(k), n, in.size()));
}

void require_min_arity(std::span<const ActShape> in, std::size_t n, LayerKind k) {
  if (in.size() < n)
    throw Error(fmt::format("{} expects at least {} inputs, got {}", kind_name(k), n, in.size()));
}

ActShape shape_of(const Tensor& t) {
  if (t.rank() != 3) throw Error("activation must be rank 3 (batch, channels, length), got " + shape_str(t.shape()));
  return {t.dim(1), t.dim(2)};
}

void check_input(const Layer& layer, std::span<const Tensor* const> in) {
  std::vector<ActShape> shapes;
  shapes.reserve(in.size());
  for (const Tensor* t : in) shapes.push_back(shape_of(*t));
  (void)layer.infer(shapes);
  for (const Tensor* t : in)
    if (t->dim(0) != in[0]->dim(0)) throw Error("inputs disagree on batch size");
}

Tensor& din_or_throw(std::span<Tensor* const> din, std::size_t i) {
  if (i >= din.size() || din[i] == nullptr) throw Error("missing input-gradient buffer");
  return *din[i];
}

std::string pname(const ParamStore& ps, int idx) { return idx >= 0 ? ps.at(idx).name : std::string(); }

int pidx(const ParamStore& ps, const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return -1;
  const std::string name = j.at(key).get<std::string>();
  return name.empty() ? -1 : ps.require(name);
}

std::int64_t round_to_int(double v) { return static_cast<std::int64_t>(round_half_away(v)); }

json gate_to_json(const ChannelGate& g, const ParamStore& ps) {
  if (!g.active()) return nullptr;
  json names = json::array();
  for (int p : g.param) names.push_back(pname(ps, p));
  return json{{"params", names}, {"slots", g.slot}};
}

ChannelGate gate_from_json(const json& j, const ParamStore& ps) {
  ChannelGate g;
  if (j.is_null()) return g;
  for (const auto& n : j.at("params")) {
    const std::string s = n.get<std::string>();
    g.param.push_back(s.empty() ? -1 : ps.require(s));
  }
  g.slot = j.at("slots").get<std::vector<int>>();
  if (g.slot.size() != g.param.size()) throw Error("gate slots and params disagree in length");
  return g;
}

}  // namespace

const char* kind_name(LayerKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "unknown";
}

LayerKind kind_from_name(std::string_view s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw Error("unknown layer kind '" + std::string(s) + "'");
}

std::span<double> param_grad(ParamStore& ps, int idx) {
  Tensor& t = ps.value(idx);
  t.ensure_grad();
  return t.grad();
}

void Layer::remap(const ParamStore& from, ParamStore& to) {
  for (int* slot : param_slots())
    if (*slot >= 0) *slot = to.import(from, *slot);
}

// ---------------------------------------------------------------------------
// ChannelGate

bool ChannelGate::active() const {
  return std::any_of(param.begin(), param.end(), [](int p) { return p >= 0; });
}

std::vector<double> ChannelGate::values(const ParamStore& ps, const Surrogate& s) const {
  std::vector<double> m(param.size(), 1.0);
  for (std::size_t c = 0; c < param.size(); ++c) {
    if (param[c] < 0) continue;
    const double t = ps.value(param[c])[static_cast<std::size_t>(slot[c])];
    m[c] = s.mask ? std::clamp(t, -1.0, 1.0) : heaviside(t);
  }
  return m;
}

void ChannelGate::apply(Tensor& y, std::span<const double> m) const {
  const int n = y.dim(0), ch = y.dim(1), len = y.dim(2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) {
      const double g = m[static_cast<std::size_t>(c)];
      if (g == 1.0) continue;
      for (int l = 0; l < len; ++l) y.at(i, c, l) *= g;
    }
}

void ChannelGate::backward(const Tensor& pre, const Tensor& dy, std::span<const double> m, ParamStore& ps,
                           Tensor& dpre) const {
  const int n = dy.dim(0), ch = dy.dim(1), len = dy.dim(2);
  for (int c = 0; c < ch; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double dm = 0.0;
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < len; ++l) {
        const double g = dy.at(i, c, l);
        dm += g * pre.at(i, c, l);
        dpre.at(i, c, l) = g * m[cu];
      }
    if (param[cu] >= 0) {
      const double t = ps.value(param[cu])[static_cast<std::size_t>(slot[cu])];
      param_grad(ps, param[cu])[static_cast<std::size_t>(slot[cu])] += dm * ste_grad(t);
    }
  }
}

// ---------------------------------------------------------------------------
// Conv1d

Conv1d::Conv1d(ConvSpec spec, int weight, int bias, bool linear)
    : spec_(spec), weight_(weight), bias_(bias), linear_(linear) {
  if (spec_.groups < 1 || spec_.in_ch % spec_.groups != 0 || spec_.out_ch % spec_.groups != 0)
    throw Error(fmt::format("groups={} must divide in_ch={} and out_ch={}", spec_.groups, spec_.in_ch,
                            spec_.out_ch));
  if (spec_.kernel < 1 || spec_.stride < 1 || spec_.dilation < 1 || spec_.pad < 0)
    throw Error("invalid convolution hyperparameters");
  if (linear_ && (spec_.kernel != 1 || spec_.stride != 1 || spec_.pad != 0 || spec_.groups != 1))
    throw Error("linear layers are dense 1x1 maps");
}

Conv1d Conv1d::create(ParamStore& ps, const std::string& name, ConvSpec spec, std::mt19937_64& rng,
                      bool linear) {
  // Kaiming-uniform with a = sqrt(5): bound = 1/sqrt(fan_in) for weights and biases.
  const int fan_in = (spec.in_ch / std::max(spec.groups, 1)) * spec.kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({spec.out_ch, spec.in_ch / std::max(spec.groups, 1), spec.kernel});
  for (double& v : w.data()) v = u(rng);
  const int wi = ps.add(name + ".weight", std::move(w), ParamRole::Weight);
  int bi = -1;
  if (spec.bias) {
    Tensor b({spec.out_ch});
    for (double& v : b.data()) v = u(rng);
    bi = ps.add(name + ".bias", std::move(b), ParamRole::Weight);
  }
  return Conv1d(spec, wi, bi, linear);
}

ActShape Conv1d::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  if (in[0].channels != spec_.in_ch)
    throw Error(fmt::format("{} expects {} input channels, got {}", kind_name(kind()), spec_.in_ch, in[0].channels));
  if (linear_ && in[0].length != 1)
    throw Error(fmt::format("linear layer expects length-1 input, got length {}", in[0].length));
  const int lo = spec_.out_length(in[0].length);
  if (lo < 1) throw Error(fmt::format("convolution output would be empty for input length {}", in[0].length));
  return {spec_.out_ch, lo};
}

std::size_t Conv1d::param_count(const ParamStore&) const {
  return spec_.weight_count() + (bias_ >= 0 ? static_cast<std::size_t>(spec_.out_ch) : 0);
}

std::vector<double> Conv1d::bit_mix(const ParamStore& ps, double tau) const {
  if (!wq || wq->theta < 0) return {};
  return softmax(ps.value(wq->theta).data(), tau);
}

std::vector<double> Conv1d::effective_weight(const ParamStore& ps, const RunOptions& opts) const {
  const auto w = ps.value(weight_).data();
  if (!wq || opts.surrogate.weight_round) return {w.begin(), w.end()};
  if (wq->frozen > 0) return fake_quant_minmax(w, wq->frozen);
  const auto mix = bit_mix(ps, opts.tau);
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t p = 0; p < wq->bits.size(); ++p) {
    const auto v = fake_quant_minmax(w, wq->bits[p]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += mix[p] * v[i];
  }
  return out;
}

Tensor Conv1d::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  const ParamStore& ps = ctx.params;
  const int n_batch = x.dim(0), len = x.dim(2), lo = spec_.out_length(len);
  const int cpg_in = spec_.in_ch / spec_.groups, cpg_out = spec_.out_ch / spec_.groups;
  const int kk = spec_.kernel, st = spec_.stride, dil = spec_.dilation, pad = spec_.pad;
  const auto w = ps.value(weight_).data();

  // Effective weight and, for a bit-width search, its per-precision variants.
  variants_.clear();
  mix_.clear();
  const bool searching = wq && wq->frozen == 0 && wq->theta >= 0 && !ctx.opts.surrogate.weight_round;
  if (searching) {
    mix_ = bit_mix(ps, ctx.opts.tau);
    w_eff_.assign(w.size(), 0.0);
    for (std::size_t p = 0; p < wq->bits.size(); ++p) {
      variants_.push_back(fake_quant_minmax(w, wq->bits[p]));
      for (std::size_t i = 0; i < w.size(); ++i) w_eff_[i] += mix_[p] * variants_.back()[i];
    }
  } else {
    w_eff_ = effective_weight(ps, ctx.opts);
  }

  Tensor y({n_batch, spec_.out_ch, lo});
  auto t_range = [&](int off) {
    const int t_lo = off < 0 ? (-off + st - 1) / st : 0;
    const int t_hi = (len - 1 - off) < 0 ? 0 : std::min(lo, (len - 1 - off) / st + 1);
    return std::pair{t_lo, t_hi};
  };

  const bool integer_path = wq && wq->frozen > 0 && !ctx.opts.surrogate.weight_round && x.qscale() > 0.0;
  if (integer_path) {
    // Evaluate on integer codes so the result coincides with the integer runtime.
    const AffineGrid grid = minmax_grid(w, wq->frozen);
    const AffineConvTerms terms = affine_conv_terms(grid, x.qscale());
    std::vector<std::int64_t> wc(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) wc[i] = grid.code(w[i]);
    std::vector<std::int64_t> xc(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xc[i] = round_to_int(x[i] / x.qscale());
    std::vector<std::int64_t> acc(static_cast<std::size_t>(lo)), sum_x(static_cast<std::size_t>(lo));
    for (int n = 0; n < n_batch; ++n)
      for (int g = 0; g < spec_.groups; ++g) {
        std::fill(sum_x.begin(), sum_x.end(), 0);
        for (int c = 0; c < cpg_in; ++c) {
          const std::int64_t* xr = &xc[(static_cast<std::size_t>(n) * spec_.in_ch + g * cpg_in + c) * len];
          for (int k = 0; k < kk; ++k) {
            const int off = k * dil - pad;
            const auto [t0, t1] = t_range(off);
            for (int t = t0; t < t1; ++t) sum_x[static_cast<std::size_t>(t)] += xr[t * st + off];
          }
        }
        for (int oo = 0; oo < cpg_out; ++oo) {
          const int o = g * cpg_out + oo;
          std::fill(acc.begin(), acc.end(), 0);
          for (int c = 0; c < cpg_in; ++c) {
            const std::int64_t* xr = &xc[(static_cast<std::size_t>(n) * spec_.in_ch + g * cpg_in + c) * len];
            for (int k = 0; k < kk; ++k) {
              const std::int64_t wv = wc[(static_cast<std::size_t>(o) * cpg_in + c) * kk + k];
              const int off = k * dil - pad;
              const auto [t0, t1] = t_range(off);
              for (int t = t0; t < t1; ++t) acc[static_cast<std::size_t>(t)] += wv * xr[t * st + off];
            }
          }
          const std::int64_t b_int =
              bias_ >= 0 ? round_to_int(ps.value(bias_)[static_cast<std::size_t>(o)] / terms.b_step) : 0;
          for (int t = 0; t < lo; ++t)
            y.at(n, o, t) = affine_conv_output(terms, acc[static_cast<std::size_t>(t)],
                                               sum_x[static_cast<std::size_t>(t)], b_int);
        }
      }
  } else {
    for (int n = 0; n < n_batch; ++n)
      for (int o = 0; o < spec_.out_ch; ++o) {
        const int g = o / cpg_out;
        double* yr = &y.at(n, o, 0);
        for (int c = 0; c < cpg_in; ++c) {
          const double* xr = &x.at(n, g * cpg_in + c, 0);
          for (int k = 0; k < kk; ++k) {
            const double wv = w_eff_[(static_cast<std::size_t>(o) * cpg_in + c) * kk + k];
            const int off = k * dil - pad;
            const auto [t0, t1] = t_range(off);
            for (int t = t0; t < t1; ++t) yr[t] += wv * xr[t * st + off];
          }
        }
        if (bias_ >= 0) {
          const double b = ps.value(bias_)[static_cast<std::size_t>(o)];
          for (int t = 0; t < lo; ++t) yr[t] += b;
        }
      }
  }

  if (gate.active()) {
    gate_m_ = gate.values(ps, ctx.opts.surrogate);
    pre_gate_ = y;
    gate.apply(y, gate_m_);
  }
  return y;
}

void Conv1d::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                      std::span<Tensor* const> din, RunContext& ctx) {
  const Tensor& x = *in[0];
  ParamStore& ps = ctx.params;
  const Tensor* dy = &dout;
  Tensor dpre;
  if (gate.active()) {
    dpre = Tensor(dout.shape());
    gate.backward(pre_gate_, dout, gate_m_, ps, dpre);
    dy = &dpre;
  }
  const int n_batch = x.dim(0), len = x.dim(2), lo = dy->dim(2);
  const int cpg_in = spec_.in_ch / spec_.groups, cpg_out = spec_.out_ch / spec_.groups;
  const int kk = spec_.kernel, st = spec_.stride, dil = spec_.dilation, pad = spec_.pad;
  Tensor* dx = din.empty() ? nullptr : din[0];

  std::vector<double> dw_eff(w_eff_.size(), 0.0);
  for (int n = 0; n < n_batch; ++n)
    for (int o = 0; o < spec_.out_ch; ++o) {
      const int g = o / cpg_out;
      const double* dyr = &dy->at(n, o, 0);
      if (bias_ >= 0) {
        double s = 0.0;
        for (int t = 0; t < lo; ++t) s += dyr[t];
        param_grad(ps, bias_)[static_cast<std::size_t>(o)] += s;
      }
      for (int c = 0; c < cpg_in; ++c) {
        const double* xr = &x.at(n, g * cpg_in + c, 0);
        double* dxr = dx ? &dx->at(n, g * cpg_in + c, 0) : nullptr;
        for (int k = 0; k < kk; ++k) {
          const std::size_t wi = (static_cast<std::size_t>(o) * cpg_in + c) * kk + k;
          const double wv = w_eff_[wi];
          const int off = k * dil - pad;
          const int t0 = off < 0 ? (-off + st - 1) / st : 0;
          const int t1 = (len - 1 - off) < 0 ? 0 : std::min(lo, (len - 1 - off) / st + 1);
          double s = 0.0;
          for (int t = t0; t < t1; ++t) {
            s += dyr[t] * xr[t * st + off];
            if (dxr) dxr[t * st + off] += wv * dyr[t];
          }
          dw_eff[wi] += s;
        }
      }
    }

  // Straight-through: every quantized variant passes the gradient to the shared float weight.
  auto gw = param_grad(ps, weight_);
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw_eff[i];
  if (!variants_.empty()) {
    std::vector<double> dmix(variants_.size(), 0.0);
    for (std::size_t p = 0; p < variants_.size(); ++p)
      for (std::size_t i = 0; i < dw_eff.size(); ++i) dmix[p] += dw_eff[i] * variants_[p][i];
    softmax_backward(mix_, dmix, ctx.opts.tau, param_grad(ps, wq->theta));
  }
}

json Conv1d::to_json(const ParamStore& ps) const {
  json j{{"in_ch", spec_.in_ch},     {"out_ch", spec_.out_ch}, {"kernel", spec_.kernel},
         {"stride", spec_.stride},   {"dilation", spec_.dilation}, {"groups", spec_.groups},
         {"pad", spec_.pad},         {"weight", pname(ps, weight_)},
         {"bias", bias_ >= 0 ? json(pname(ps, bias_)) : json(nullptr)}};
  j["gate"] = gate_to_json(gate, ps);
  if (wq) {
    j["wq"] = json{{"theta", wq->theta >= 0 ? json(pname(ps, wq->theta)) : json(nullptr)},
                   {"bits", wq->bits},
                   {"frozen", wq->frozen}};
  }
  return j;
}

std::vector<int*> Conv1d::param_slots() {
  std::vector<int*> s{&weight_, &bias_};
  for (int& p : gate.param) s.push_back(&p);
  if (wq) s.push_back(&wq->theta);
  return s;
}

// ---------------------------------------------------------------------------
// ReLU / PReLU

ActShape ReLU::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  return in[0];
}

Tensor ReLU::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  Tensor y = *in[0];
  y.drop_grad();
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

void ReLU::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                    std::span<Tensor* const> din, RunContext&) {
  Tensor& dx = din_or_throw(din, 0);
  const Tensor& x = *in[0];
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) dx[i] += dout[i];
}

PReLU PReLU::create(ParamStore& ps, const std::string& name, int channels, double init) {
  return PReLU(ps.add(name + ".slope", Tensor({channels}, init), ParamRole::Weight));
}

ActShape PReLU::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  return in[0];
}

Tensor PReLU::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  const auto a = ctx.params.value(slope_).data();
  if (static_cast<int>(a.size()) != x.dim(1))
    throw Error(fmt::format("prelu has {} slopes for {} channels", a.size(), x.dim(1)));
  Tensor y(x.shape());
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int l = 0; l < x.dim(2); ++l) {
        const double v = x.at(n, c, l);
        y.at(n, c, l) = v > 0.0 ? v : a[static_cast<std::size_t>(c)] * v;
      }
  return y;
}

void PReLU::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                     std::span<Tensor* const> din, RunContext& ctx) {
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  const auto a = ctx.params.value(slope_).data();
  auto ga = param_grad(ctx.params, slope_);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int l = 0; l < x.dim(2); ++l) {
        const double v = x.at(n, c, l), g = dout.at(n, c, l);
        if (v > 0.0) {
          dx.at(n, c, l) += g;
        } else {
          dx.at(n, c, l) += a[static_cast<std::size_t>(c)] * g;
          ga[static_cast<std::size_t>(c)] += g * v;
        }
      }
}

json PReLU::to_json(const ParamStore& ps) const { return {{"slope", pname(ps, slope_)}}; }

// ---------------------------------------------------------------------------
// Norm1d

Norm1d::Norm1d(bool instance, int gamma, int beta, int mean, int var, double eps, double momentum,
               bool track_running)
    : instance_(instance), gamma_(gamma), beta_(beta), mean_(mean), var_(var), eps_(eps), momentum_(momentum),
      track_running_(track_running) {}

Norm1d Norm1d::create(ParamStore& ps, const std::string& name, int channels, bool instance) {
  const int g = ps.add(name + ".gamma", Tensor({channels}, 1.0), ParamRole::Weight);
  const int b = ps.add(name + ".beta", Tensor({channels}, 0.0), ParamRole::Weight);
  const int m = ps.add(name + ".running_mean", Tensor({channels}, 0.0), ParamRole::Buffer);
  const int v = ps.add(name + ".running_var", Tensor({channels}, 1.0), ParamRole::Buffer);
  return Norm1d(instance, g, b, m, v);
}

ActShape Norm1d::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  return in[0];
}

Tensor Norm1d::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  ParamStore& ps = ctx.params;
  const int nb = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (static_cast<int>(ps.value(gamma_).size()) != ch)
    throw Error(fmt::format("{} has {} channels, input has {}", kind_name(kind()), ps.value(gamma_).size(), ch));
  const auto gamma = ps.value(gamma_).data();
  const auto beta = ps.value(beta_).data();
  auto rmean = ps.value(mean_).data();
  auto rvar = ps.value(var_).data();

  batch_stats_ = uses_batch_stats(ctx.opts.training);
  xhat_ = Tensor(x.shape());
  Tensor y(x.shape());

  auto normalize = [&](int n, int c, double mean, double inv_std) {
    const auto cu = static_cast<std::size_t>(c);
    for (int l = 0; l < len; ++l) {
      const double h = (x.at(n, c, l) - mean) * inv_std;
      xhat_.at(n, c, l) = h;
      y.at(n, c, l) = gamma[cu] * h + beta[cu];
    }
  };

  if (!batch_stats_) {
    inv_std_.assign(static_cast<std::size_t>(ch), 0.0);
    for (int c = 0; c < ch; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      inv_std_[cu] = 1.0 / std::sqrt(rvar[cu] + eps_);
      for (int n = 0; n < nb; ++n) normalize(n, c, rmean[cu], inv_std_[cu]);
    }
  } else if (!instance_) {
    inv_std_.assign(static_cast<std::size_t>(ch), 0.0);
    const double m = static_cast<double>(nb) * len;
    for (int c = 0; c < ch; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      double mean = 0.0;
      for (int n = 0; n < nb; ++n)
        for (int l = 0; l < len; ++l) mean += x.at(n, c, l);
      mean /= m;
      double var = 0.0;
      for (int n = 0; n < nb; ++n)
        for (int l = 0; l < len; ++l) {
          const double d = x.at(n, c, l) - mean;
          var += d * d;
        }
      var /= m;
      inv_std_[cu] = 1.0 / std::sqrt(var + eps_);
      for (int n = 0; n < nb; ++n) normalize(n, c, mean, inv_std_[cu]);
      if (ctx.opts.training && track_running_) {
        rmean[cu] = (1.0 - momentum_) * rmean[cu] + momentum_ * mean;
        const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
        rvar[cu] = (1.0 - momentum_) * rvar[cu] + momentum_ * unbiased;
      }
    }
  } else {
    inv_std_.assign(static_cast<std::size_t>(nb) * ch, 0.0);
    std::vector<double> mean_acc(static_cast<std::size_t>(ch), 0.0), var_acc(static_cast<std::size_t>(ch), 0.0);
    for (int n = 0; n < nb; ++n)
      for (int c = 0; c < ch; ++c) {
        double mean = 0.0;
        for (int l = 0; l < len; ++l) mean += x.at(n, c, l);
        mean /= len;
        double var = 0.0;
        for (int l = 0; l < len; ++l) {
          const double d = x.at(n, c, l) - mean;
          var += d * d;
        }
        var /= len;
        const std::size_t gi = static_cast<std::size_t>(n) * ch + c;
        inv_std_[gi] = 1.0 / std::sqrt(var + eps_);
        normalize(n, c, mean, inv_std_[gi]);
        mean_acc[static_cast<std::size_t>(c)] += mean;
        var_acc[static_cast<std::size_t>(c)] += len > 1 ? var * len / (len - 1.0) : var;
      }
    if (ctx.opts.training && track_running_)
      for (int c = 0; c < ch; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        rmean[cu] = (1.0 - momentum_) * rmean[cu] + momentum_ * mean_acc[cu] / nb;
        rvar[cu] = (1.0 - momentum_) * rvar[cu] + momentum_ * var_acc[cu] / nb;
      }
  }

  if (gate.active()) {
    gate_m_ = gate.values(ps, ctx.opts.surrogate);
    pre_gate_ = y;
    gate.apply(y, gate_m_);
  }
  return y;
}

void Norm1d::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                      std::span<Tensor* const> din, RunContext& ctx) {
  ParamStore& ps = ctx.params;
  const Tensor* dy = &dout;
  Tensor dpre;
  if (gate.active()) {
    dpre = Tensor(dout.shape());
    gate.backward(pre_gate_, dout, gate_m_, ps, dpre);
    dy = &dpre;
  }
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  const int nb = x.dim(0), ch = x.dim(1), len = x.dim(2);
  const auto gamma = ps.value(gamma_).data();
  auto gg = param_grad(ps, gamma_);
  auto gb = param_grad(ps, beta_);

  for (int c = 0; c < ch; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    for (int n = 0; n < nb; ++n)
      for (int l = 0; l < len; ++l) {
        gg[cu] += dy->at(n, c, l) * xhat_.at(n, c, l);
        gb[cu] += dy->at(n, c, l);
      }
  }

  if (!batch_stats_) {
    for (int n = 0; n < nb; ++n)
      for (int c = 0; c < ch; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        for (int l = 0; l < len; ++l) dx.at(n, c, l) += dy->at(n, c, l) * gamma[cu] * inv_std_[cu];
      }
    return;
  }

  // dx = inv_std/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)) over each statistics group.
  auto group_backward = [&](int c, int n_begin, int n_end, double inv_std) {
    const auto cu = static_cast<std::size_t>(c);
    const double m = static_cast<double>(n_end - n_begin) * len;
    double s1 = 0.0, s2 = 0.0;
    for (int n = n_begin; n < n_end; ++n)
      for (int l = 0; l < len; ++l) {
        const double dh = dy->at(n, c, l) * gamma[cu];
        s1 += dh;
        s2 += dh * xhat_.at(n, c, l);
      }
    for (int n = n_begin; n < n_end; ++n)
      for (int l = 0; l < len; ++l) {
        const double dh = dy->at(n, c, l) * gamma[cu];
        dx.at(n, c, l) += inv_std / m * (m * dh - s1 - xhat_.at(n, c, l) * s2);
      }
  };
  if (!instance_) {
    for (int c = 0; c < ch; ++c) group_backward(c, 0, nb, inv_std_[static_cast<std::size_t>(c)]);
  } else {
    for (int n = 0; n < nb; ++n)
      for (int c = 0; c < ch; ++c) group_backward(c, n, n + 1, inv_std_[static_cast<std::size_t>(n) * ch + c]);
  }
}

json Norm1d::to_json(const ParamStore& ps) const {
  json j{{"gamma", pname(ps, gamma_)},   {"beta", pname(ps, beta_)},
         {"running_mean", pname(ps, mean_)}, {"running_var", pname(ps, var_)},
         {"eps", eps_},                  {"momentum", momentum_},
         {"track_running", track_running_}};
  j["gate"] = gate_to_json(gate, ps);
  return j;
}

std::vector<int*> Norm1d::param_slots() {
  std::vector<int*> s{&gamma_, &beta_, &mean_, &var_};
  for (int& p : gate.param) s.push_back(&p);
  return s;
}

// ---------------------------------------------------------------------------
// Pooling, upsampling and structural layers

ActShape Pool1d::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  if (kernel_ < 1 || stride_ < 1) throw Error("invalid pooling hyperparameters");
  if (in[0].length < kernel_)
    throw Error(fmt::format("pool kernel {} exceeds input length {}", kernel_, in[0].length));
  return {in[0].channels, (in[0].length - kernel_) / stride_ + 1};
}

Tensor Pool1d::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  const int nb = x.dim(0), ch = x.dim(1), len = x.dim(2);
  const int lo = (len - kernel_) / stride_ + 1;
  Tensor y({nb, ch, lo});
  if (max_) argmax_.assign(y.size(), 0);
  std::size_t idx = 0;
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < ch; ++c)
      for (int t = 0; t < lo; ++t, ++idx) {
        const int base = t * stride_;
        if (max_) {
          int best = base;
          for (int k = 1; k < kernel_; ++k)
            if (x.at(n, c, base + k) > x.at(n, c, best)) best = base + k;
          argmax_[idx] = best;
          y[idx] = x.at(n, c, best);
        } else {
          double s = 0.0;
          for (int k = 0; k < kernel_; ++k) s += x.at(n, c, base + k);
          y[idx] = s / kernel_;
        }
      }
  if (max_) y.set_qscale(x.qscale());
  return y;
}

void Pool1d::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                      std::span<Tensor* const> din, RunContext&) {
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  const int nb = x.dim(0), ch = x.dim(1);
  const int lo = dout.dim(2);
  std::size_t idx = 0;
  for (int n = 0; n < nb; ++n)
    for (int c = 0; c < ch; ++c)
      for (int t = 0; t < lo; ++t, ++idx) {
        if (max_) {
          dx.at(n, c, argmax_[idx]) += dout[idx];
        } else {
          const double g = dout[idx] / kernel_;
          for (int k = 0; k < kernel_; ++k) dx.at(n, c, t * stride_ + k) += g;
        }
      }
}

json Pool1d::to_json(const ParamStore&) const { return {{"kernel", kernel_}, {"stride", stride_}}; }

ActShape Upsample::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  if (factor_ < 1) throw Error("upsample factor must be positive");
  return {in[0].channels, in[0].length * factor_};
}

Tensor Upsample::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  Tensor y({x.dim(0), x.dim(1), x.dim(2) * factor_});
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int t = 0; t < y.dim(2); ++t) y.at(n, c, t) = x.at(n, c, t / factor_);
  y.set_qscale(x.qscale());
  return y;
}

void Upsample::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                        std::span<Tensor* const> din, RunContext&) {
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int t = 0; t < dout.dim(2); ++t) dx.at(n, c, t / factor_) += dout.at(n, c, t);
}

json Upsample::to_json(const ParamStore&) const { return {{"factor", factor_}}; }

ActShape Add::infer(std::span<const ActShape> in) const {
  require_min_arity(in, 2, kind());
  for (const auto& s : in)
    if (s != in[0])
      throw Error(fmt::format("add operands disagree: ({}, {}) vs ({}, {})", in[0].channels, in[0].length,
                              s.channels, s.length));
  return in[0];
}

Tensor Add::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  Tensor y = *in[0];
  y.drop_grad();
  y.set_qscale(0.0);
  for (std::size_t k = 1; k < in.size(); ++k)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*in[k])[i];
  return y;
}

void Add::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                   std::span<Tensor* const> din, RunContext&) {
  for (std::size_t k = 0; k < in.size(); ++k) {
    Tensor& dx = din_or_throw(din, k);
    for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i];
  }
}

ActShape Concat::infer(std::span<const ActShape> in) const {
  require_min_arity(in, 2, kind());
  int ch = 0;
  for (const auto& s : in) {
    if (s.length != in[0].length)
      throw Error(fmt::format("concat operands disagree in length: {} vs {}", in[0].length, s.length));
    ch += s.channels;
  }
  return {ch, in[0].length};
}

Tensor Concat::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  int ch = 0;
  for (const Tensor* t : in) ch += t->dim(1);
  const int nb = in[0]->dim(0), len = in[0]->dim(2);
  Tensor y({nb, ch, len});
  for (int n = 0; n < nb; ++n) {
    int off = 0;
    for (const Tensor* t : in) {
      for (int c = 0; c < t->dim(1); ++c)
        for (int l = 0; l < len; ++l) y.at(n, off + c, l) = t->at(n, c, l);
      off += t->dim(1);
    }
  }
  return y;
}

void Concat::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                      std::span<Tensor* const> din, RunContext&) {
  const int nb = dout.dim(0), len = dout.dim(2);
  for (int n = 0; n < nb; ++n) {
    int off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      Tensor& dx = din_or_throw(din, k);
      for (int c = 0; c < in[k]->dim(1); ++c)
        for (int l = 0; l < len; ++l) dx.at(n, c, l) += dout.at(n, off + c, l);
      off += in[k]->dim(1);
    }
  }
}

ActShape Identity::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  return in[0];
}

Tensor Identity::forward(std::span<const Tensor* const> in, RunContext&) {
  check_input(*this, in);
  Tensor y = *in[0];
  y.drop_grad();
  return y;
}

void Identity::backward(std::span<const Tensor* const>, const Tensor&, const Tensor& dout,
                        std::span<Tensor* const> din, RunContext&) {
  Tensor& dx = din_or_throw(din, 0);
  for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i];
}

// ---------------------------------------------------------------------------
// ActQuant

ActShape ActQuant::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  if (bits_ < 2 || bits_ > 16) throw Error("activation bit-width out of range");
  return in[0];
}

Tensor ActQuant::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  const double alpha = ctx.params.value(alpha_)[0];
  if (!(alpha > 0.0)) throw Error(fmt::format("PaCT clip must be positive, got {}", alpha));
  Tensor y(x.shape());
  if (ctx.opts.surrogate.act_round) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], -alpha, alpha);
    return y;
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = pact_value(x[i], alpha, bits_);
  y.set_qscale(pact_scale(alpha, bits_));
  return y;
}

void ActQuant::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                        std::span<Tensor* const> din, RunContext& ctx) {
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  const double alpha = ctx.params.value(alpha_)[0];
  double da = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= alpha)
      da += dout[i];
    else if (x[i] <= -alpha)
      da -= dout[i];
    else
      dx[i] += dout[i];
  }
  param_grad(ctx.params, alpha_)[0] += da;
}

json ActQuant::to_json(const ParamStore& ps) const { return {{"alpha", pname(ps, alpha_)}, {"bits", bits_}}; }

// ---------------------------------------------------------------------------
// Choice

Choice::Choice(int theta, std::vector<Alternative> alts) : theta_(theta), alts_(std::move(alts)) {
  if (alts_.size() < 2) throw Error("a choice site needs at least two alternatives");
}

ActShape Choice::infer(std::span<const ActShape> in) const {
  require_arity(in, 1, kind());
  std::optional<ActShape> out;
  for (const auto& a : alts_) {
    ActShape s = in[0];
    for (const auto& layer : a.chain) {
      const ActShape arr[1] = {s};
      s = layer.infer(arr);
    }
    if (out && *out != s)
      throw Error(fmt::format("choice alternative '{}' yields ({}, {}), expected ({}, {})", a.label, s.channels,
                              s.length, out->channels, out->length));
    out = s;
  }
  return *out;
}

std::vector<double> Choice::probabilities(const ParamStore& ps) const {
  const auto th = ps.value(theta_).data();
  if (th.size() != alts_.size()) throw Error("choice theta length differs from alternative count");
  return softmax(th);
}

int Choice::selected(const ParamStore& ps) const {
  if (forced >= 0) return forced;
  return argmax_first(ps.value(theta_).data());
}

std::vector<double> Choice::alt_costs(const ParamStore& ps) const {
  std::vector<double> c;
  for (const auto& a : alts_) {
    std::size_t n = 0;
    for (const auto& l : a.chain) n += l.param_count(ps);
    c.push_back(static_cast<double>(n));
  }
  return c;
}

std::size_t Choice::param_count(const ParamStore& ps) const {
  return static_cast<std::size_t>(alt_costs(ps)[static_cast<std::size_t>(selected(ps))]);
}

Tensor Choice::forward(std::span<const Tensor* const> in, RunContext& ctx) {
  check_input(*this, in);
  const Tensor& x = *in[0];
  if (forced >= 0) {
    mix_.assign(alts_.size(), 0.0);
    mix_[static_cast<std::size_t>(forced)] = 1.0;
  } else {
    mix_ = probabilities(ctx.params);
  }
  acts_.assign(alts_.size(), {});
  Tensor y;
  for (std::size_t j = 0; j < alts_.size(); ++j) {
    if (forced >= 0 && static_cast<int>(j) != forced) continue;
    const Tensor* cur = &x;
    for (auto& layer : alts_[j].chain) {
      const Tensor* args[1] = {cur};
      acts_[j].push_back(layer.forward(args, ctx));
      cur = &acts_[j].back();
    }
    if (y.empty()) y = Tensor(cur->shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += mix_[j] * (*cur)[i];
  }
  return y;
}

void Choice::backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& dout,
                      std::span<Tensor* const> din, RunContext& ctx) {
  const Tensor& x = *in[0];
  Tensor& dx = din_or_throw(din, 0);
  std::vector<double> dmix(alts_.size(), 0.0);
  for (std::size_t j = 0; j < alts_.size(); ++j) {
    if (forced >= 0 && static_cast<int>(j) != forced) continue;
    const Tensor& out_j = acts_[j].empty() ? x : acts_[j].back();
    for (std::size_t i = 0; i < dout.size(); ++i) dmix[j] += dout[i] * out_j[i];

    Tensor d(dout.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = mix_[j] * dout[i];
    for (std::size_t e = alts_[j].chain.size(); e-- > 0;) {
      const Tensor& input = e == 0 ? x : acts_[j][e - 1];
      Tensor dinput(input.shape());
      const Tensor* args[1] = {&input};
      Tensor* dargs[1] = {&dinput};
      alts_[j].chain[e].backward(args, acts_[j][e], d, dargs, ctx);
      d = std::move(dinput);
    }
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
  }
  if (forced < 0) softmax_backward(mix_, dmix, 1.0, param_grad(ctx.params, theta_));
}

json Choice::to_json(const ParamStore& ps) const {
  json alts = json::array();
  for (const auto& a : alts_) {
    json chain = json::array();
    for (const auto& l : a.chain) chain.push_back(l.to_json(ps));
    alts.push_back({{"label", a.label}, {"chain", chain}});
  }
  return {{"theta", pname(ps, theta_)}, {"forced", forced}, {"alternatives", alts}};
}

std::vector<int*> Choice::param_slots() {
  std::vector<int*> s{&theta_};
  for (auto& a : alts_)
    for (auto& l : a.chain) {
      auto sub = l.param_slots();
      s.insert(s.end(), sub.begin(), sub.end());
    }
  return s;
}

// ---------------------------------------------------------------------------
// Deserialization

namespace {

Conv1d conv_from_json(const json& a, const ParamStore& ps, bool linear) {
  ConvSpec spec;
  spec.in_ch = a.at("in_ch");
  spec.out_ch = a.at("out_ch");
  spec.kernel = a.at("kernel");
  spec.stride = a.at("stride");
  spec.dilation = a.at("dilation");
  spec.groups = a.at("groups");
  spec.pad = a.at("pad");
  const int b = pidx(ps, a, "bias");
  spec.bias = b >= 0;
  Conv1d conv(spec, ps.require(a.at("weight").get<std::string>()), b, linear);
  if (a.contains("gate")) conv.gate = gate_from_json(a.at("gate"), ps);
  if (a.contains("wq")) {
    const json& q = a.at("wq");
    WeightQuant wq;
    wq.theta = pidx(ps, q, "theta");
    wq.bits = q.at("bits").get<std::vector<int>>();
    wq.frozen = q.at("frozen");
    conv.wq = wq;
  }
  return conv;
}

}  // namespace

std::unique_ptr<Layer> layer_from_json(LayerKind kind, const json& a, const ParamStore& ps) {
  switch (kind) {
    case LayerKind::Conv1d: return std::make_unique<Conv1d>(conv_from_json(a, ps, false));
    case LayerKind::Linear: return std::make_unique<Conv1d>(conv_from_json(a, ps, true));
    case LayerKind::ReLU: return std::make_unique<ReLU>();
    case LayerKind::PReLU: return std::make_unique<PReLU>(ps.require(a.at("slope").get<std::string>()));
    case LayerKind::BatchNorm1d:
    case LayerKind::InstanceNorm1d: {
      auto n = std::make_unique<Norm1d>(kind == LayerKind::InstanceNorm1d, pidx(ps, a, "gamma"), pidx(ps, a, "beta"),
                                        pidx(ps, a, "running_mean"), pidx(ps, a, "running_var"),
                                        a.at("eps").get<double>(), a.at("momentum").get<double>(),
                                        a.at("track_running").get<bool>());
      if (a.contains("gate")) n->gate = gate_from_json(a.at("gate"), ps);
      return n;
    }
    case LayerKind::MaxPool1d: return std::make_unique<Pool1d>(true, a.at("kernel"), a.at("stride"));
    case LayerKind::AvgPool1d: return std::make_unique<Pool1d>(false, a.at("kernel"), a.at("stride"));
    case LayerKind::Upsample: return std::make_unique<Upsample>(a.at("factor").get<int>());
    case LayerKind::Add: return std::make_unique<Add>();
    case LayerKind::Concat: return std::make_unique<Concat>();
    case LayerKind::Identity: return std::make_unique<Identity>();
    case LayerKind::ActQuant:
      return std::make_unique<ActQuant>(ps.require(a.at("alpha").get<std::string>()), a.at("bits").get<int>());
    case LayerKind::Choice: {
      std::vector<Alternative> alts;
      for (const auto& aj : a.at("alternatives")) {
        Alternative alt;
        alt.label = aj.at("label");
        for (const auto& cj : aj.at("chain")) alt.chain.push_back(conv_from_json(cj, ps, false));
        alts.push_back(std::move(alt));
      }
      auto c = std::make_unique<Choice>(ps.require(a.at("theta").get<std::string>()), std::move(alts));
      c->forced = a.value("forced", -1);
      return c;
    }
  }
  throw Error("unhandled layer kind");
}

}  // namespace bpc
