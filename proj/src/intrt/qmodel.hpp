// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/layers.hpp"
#include "core/quant_math.hpp"

namespace bpc {

/// Integer description of one convolution or linear layer.
struct QLayer {
  std::string id;
  LayerKind kind = LayerKind::Conv1d;
  ConvSpec spec;
  int bits_w = 8;
  double min_w = 0.0;
  double max_w = 0.0;
  double scale_w = 0.0;  // 0 for a constant weight tensor
  double zp_w = 0.0;     // -min_w / scale_w (real-valued)
  double scale_x = 0.0;  // input activation step
  double alpha = 0.0;    // clip of the activation quantizer feeding this layer
  double scale_out = 0.0;  // step of the quantizer consuming the output, 0 at the head
  std::size_t weight_offset = 0;  // byte offset into the packed blob
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;  // index into the bias array
  bool has_bias = false;

  AffineGrid grid() const { return AffineGrid{min_w, max_w, scale_w, bits_w}; }
};

/// Graph node of a quantized model. `layer` indexes `QuantizedModel::layers`
/// for convolutions; the remaining fields apply to their own kinds.
struct QNode {
  std::string id;
  LayerKind kind = LayerKind::Identity;
  std::vector<int> inputs;
  int layer = -1;
  double alpha = 0.0;  // ActQuant
  int bits = 8;        // ActQuant
  int kernel = 0;      // pooling
  int stride = 0;      // pooling
  int factor = 0;      // upsample
};

struct Footprint {
  std::size_t weight_bytes = 0;  // packed codes, each layer padded to a byte boundary
  std::size_t bias_bytes = 0;    // int32 biases
  std::size_t scale_bytes = 0;   // per layer: scale_w, zp_w, scale_x, scale_out as float32
  std::size_t total() const { return weight_bytes + bias_bytes + scale_bytes; }
};

struct QuantizedModel {
  ActShape input_shape{};
  int output = -1;
  std::vector<QNode> nodes;
  std::vector<QLayer> layers;
  std::vector<std::uint8_t> weights;  // packed codes of every layer
  std::vector<std::int32_t> biases;
  nlohmann::json meta = nlohmann::json::object();

  /// Codes of layer `i`, unpacked.
  std::vector<std::uint32_t> weight_codes(std::size_t i) const;
  /// Dequantized weights of layer `i`; equal to the fake-quantized training weights.
  std::vector<double> dequantized_weights(std::size_t i) const;

  Footprint footprint() const;

  nlohmann::json header() const;
  static QuantizedModel from_header(const nlohmann::json& h, const std::string& blob);

  /// `<stem>.json` header and `<stem>.bin` = packed weights followed by int32 little-endian biases.
  void save(const std::filesystem::path& stem) const;
  static QuantizedModel load(const std::filesystem::path& stem);
};

}  // namespace bpc
