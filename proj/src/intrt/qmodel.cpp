// SPDX-License-Identifier: Apache-2.0
#include "intrt/qmodel.hpp"

#include <fmt/format.h>

#include "core/serialize.hpp"
#include "intrt/packing.hpp"

namespace bpc {

using nlohmann::json;

std::vector<std::uint32_t> QuantizedModel::weight_codes(std::size_t i) const {
  const QLayer& l = layers.at(i);
  const std::size_t n = packed_size(l.weight_count, l.bits_w);
  if (l.weight_offset + n > weights.size()) throw Error(fmt::format("weights of '{}' exceed the blob", l.id));
  return unpack(std::span(weights).subspan(l.weight_offset, n), l.bits_w, l.weight_count);
}

std::vector<double> QuantizedModel::dequantized_weights(std::size_t i) const {
  const AffineGrid g = layers.at(i).grid();
  std::vector<double> out;
  for (std::uint32_t c : weight_codes(i)) out.push_back(g.dequant(static_cast<std::int32_t>(c)));
  return out;
}

Footprint QuantizedModel::footprint() const {
  Footprint f;
  for (const auto& l : layers) f.weight_bytes += packed_size(l.weight_count, l.bits_w);
  f.bias_bytes = biases.size() * sizeof(std::int32_t);
  f.scale_bytes = layers.size() * 4 * sizeof(float);
  return f;
}

json QuantizedModel::header() const {
  json jl = json::array();
  for (const auto& l : layers) {
    jl.push_back({{"id", l.id},
                  {"kind", kind_name(l.kind)},
                  {"bits_w", l.bits_w},
                  {"scale_w", l.scale_w},
                  {"zp_w", l.zp_w},
                  {"min_w", l.min_w},
                  {"max_w", l.max_w},
                  {"scale_x", l.scale_x},
                  {"alpha", l.alpha},
                  {"scale_out", l.scale_out},
                  {"in_ch", l.spec.in_ch},
                  {"out_ch", l.spec.out_ch},
                  {"kernel", l.spec.kernel},
                  {"stride", l.spec.stride},
                  {"dilation", l.spec.dilation},
                  {"groups", l.spec.groups},
                  {"pad", l.spec.pad},
                  {"weight_offset", l.weight_offset},
                  {"weight_count", l.weight_count},
                  {"bias_offset", l.bias_offset},
                  {"has_bias", l.has_bias}});
  }
  json jn = json::array();
  for (const auto& n : nodes) {
    json e{{"id", n.id}, {"kind", kind_name(n.kind)}, {"inputs", n.inputs}};
    if (n.layer >= 0) e["layer"] = n.layer;
    if (n.kind == LayerKind::ActQuant) {
      e["alpha"] = n.alpha;
      e["bits"] = n.bits;
    }
    if (n.kind == LayerKind::MaxPool1d || n.kind == LayerKind::AvgPool1d) {
      e["kernel"] = n.kernel;
      e["stride"] = n.stride;
    }
    if (n.kind == LayerKind::Upsample) e["factor"] = n.factor;
    jn.push_back(e);
  }
  const Footprint f = footprint();
  return {{"format", "bpc-quantized-v1"},
          {"input_shape", {input_shape.channels, input_shape.length}},
          {"output", output},
          {"layers", jl},
          {"nodes", jn},
          {"weight_bytes", weights.size()},
          {"bias_count", biases.size()},
          {"footprint_bytes", f.total()},
          {"meta", meta}};
}

QuantizedModel QuantizedModel::from_header(const json& h, const std::string& blob) {
  if (h.value("format", "") != "bpc-quantized-v1") throw Error("not a quantized model header");
  QuantizedModel m;
  m.input_shape = {h.at("input_shape")[0].get<int>(), h.at("input_shape")[1].get<int>()};
  m.output = h.at("output").get<int>();
  m.meta = h.value("meta", json::object());
  for (const auto& e : h.at("layers")) {
    QLayer l;
    l.id = e.at("id").get<std::string>();
    l.kind = kind_from_name(e.at("kind").get<std::string>());
    l.bits_w = e.at("bits_w").get<int>();
    l.scale_w = e.at("scale_w").get<double>();
    l.zp_w = e.at("zp_w").get<double>();
    l.min_w = e.at("min_w").get<double>();
    l.max_w = e.at("max_w").get<double>();
    l.scale_x = e.at("scale_x").get<double>();
    l.alpha = e.at("alpha").get<double>();
    l.scale_out = e.at("scale_out").get<double>();
    l.spec = ConvSpec{e.at("in_ch").get<int>(), e.at("out_ch").get<int>(), e.at("kernel").get<int>(),
                      e.at("stride").get<int>(),  e.at("dilation").get<int>(), e.at("groups").get<int>(),
                      e.at("pad").get<int>(),     e.at("has_bias").get<bool>()};
    l.weight_offset = e.at("weight_offset").get<std::size_t>();
    l.weight_count = e.at("weight_count").get<std::size_t>();
    l.bias_offset = e.at("bias_offset").get<std::size_t>();
    l.has_bias = e.at("has_bias").get<bool>();
    m.layers.push_back(l);
  }
  for (const auto& e : h.at("nodes")) {
    QNode n;
    n.id = e.at("id").get<std::string>();
    n.kind = kind_from_name(e.at("kind").get<std::string>());
    n.inputs = e.at("inputs").get<std::vector<int>>();
    n.layer = e.value("layer", -1);
    n.alpha = e.value("alpha", 0.0);
    n.bits = e.value("bits", 8);
    n.kernel = e.value("kernel", 0);
    n.stride = e.value("stride", 0);
    n.factor = e.value("factor", 0);
    m.nodes.push_back(n);
  }
  const std::size_t wb = h.at("weight_bytes").get<std::size_t>();
  const std::size_t nb = h.at("bias_count").get<std::size_t>();
  if (blob.size() != wb + 4 * nb)
    throw Error(fmt::format("quantized blob has {} bytes, header expects {}", blob.size(), wb + 4 * nb));
  m.weights.assign(blob.begin(), blob.begin() + static_cast<std::ptrdiff_t>(wb));
  for (std::size_t i = 0; i < nb; ++i) m.biases.push_back(get_i32(blob, wb + 4 * i));
  return m;
}

void QuantizedModel::save(const std::filesystem::path& stem) const {
  std::string blob(weights.begin(), weights.end());
  for (std::int32_t b : biases) put_i32(blob, b);
  write_file(stem.string() + ".json", header().dump(2));
  write_file(stem.string() + ".bin", blob);
}

QuantizedModel QuantizedModel::load(const std::filesystem::path& stem) {
  return from_header(json::parse(read_file(stem.string() + ".json")), read_file(stem.string() + ".bin"));
}

}  // namespace bpc
