// SPDX-License-Identifier: Apache-2.0
#include "core/fold.hpp"

#include <cmath>

namespace bpc {

namespace {

struct NormAffine {
  std::vector<double> scale;  // gamma / sqrt(var + eps)
  std::vector<double> shift;  // beta - mean * scale
};

NormAffine eval_affine(const Norm1d& n, const ParamStore& ps) {
  if (!n.tracks_running()) throw Error("normalization without running statistics cannot be folded");
  if (n.gate.active()) throw Error("gated normalization cannot be folded");
  const auto g = ps.value(n.gamma()).data();
  const auto b = ps.value(n.beta()).data();
  const auto m = ps.value(n.running_mean()).data();
  const auto v = ps.value(n.running_var()).data();
  NormAffine a;
  for (std::size_t c = 0; c < g.size(); ++c) {
    const double s = g[c] / std::sqrt(v[c] + n.eps());
    a.scale.push_back(s);
    a.shift.push_back(b[c] - m[c] * s);
  }
  return a;
}

bool is_norm(const Layer& l) {
  return l.kind() == LayerKind::BatchNorm1d || l.kind() == LayerKind::InstanceNorm1d;
}

}  // namespace

int fold_norms(ModelGraph& g) {
  int folded = 0;
  for (int i = 0; i < g.size();) {
    Node& nd = g.node(i);
    if (!is_norm(*nd.layer) || nd.inputs[0] == kGraphInput) {
      ++i;
      continue;
    }
    const int src = nd.inputs[0];
    auto* conv = dynamic_cast<Conv1d*>(g.node(src).layer.get());
    if (conv == nullptr || conv->gate.active() || conv->wq || g.consumers(src).size() != 1 || src == g.output()) {
      ++i;
      continue;
    }
    const auto& norm = static_cast<const Norm1d&>(*nd.layer);
    const NormAffine a = eval_affine(norm, g.params);
    ConvSpec spec = conv->spec();
    int bias = conv->bias();
    if (bias < 0) {
      bias = g.params.add(g.node(src).id + ".bias", Tensor({spec.out_ch}, 0.0), ParamRole::Weight);
      spec.bias = true;
    }
    auto w = g.params.value(conv->weight()).data();
    auto b = g.params.value(bias).data();
    const std::size_t per_out = w.size() / static_cast<std::size_t>(spec.out_ch);
    for (int o = 0; o < spec.out_ch; ++o) {
      const auto ou = static_cast<std::size_t>(o);
      for (std::size_t k = 0; k < per_out; ++k) w[ou * per_out + k] *= a.scale[ou];
      b[ou] = b[ou] * a.scale[ou] + a.shift[ou];
    }
    auto fresh = std::make_unique<Conv1d>(spec, conv->weight(), bias, conv->is_linear());
    g.replace(src, std::move(fresh));
    g.bypass(i);
    ++folded;
  }
  if (folded > 0) g.compact_params();
  return folded;
}

int norms_to_depthwise(ModelGraph& g) {
  int converted = 0;
  for (int i = 0; i < g.size(); ++i) {
    Node& nd = g.node(i);
    if (!is_norm(*nd.layer)) continue;
    const NormAffine a = eval_affine(static_cast<const Norm1d&>(*nd.layer), g.params);
    const int ch = static_cast<int>(a.scale.size());
    ConvSpec spec{ch, ch, 1, 1, 1, ch, 0, true};
    const int w = g.params.add(nd.id + ".weight", Tensor({ch, 1, 1}, a.scale), ParamRole::Weight);
    const int b = g.params.add(nd.id + ".bias", Tensor({ch}, a.shift), ParamRole::Weight);
    g.replace(i, std::make_unique<Conv1d>(spec, w, b));
    ++converted;
  }
  if (converted > 0) g.compact_params();
  return converted;
}

}  // namespace bpc
