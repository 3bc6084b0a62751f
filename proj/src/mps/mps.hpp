// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/graph.hpp"
#include "intrt/qmodel.hpp"

namespace bpc {

struct QuantPrepOptions {
  int act_bits = 8;
  double alpha_init = 8.0;
  double alpha_decay = 1e-4;
};

/// Makes a float graph quantization-ready: folds normalizations (the rest
/// become depthwise 1x1 convolutions), turns PReLU into ReLU and inserts a
/// PaCT quantizer on the input and after every convolution (except the head),
/// add, concatenation and average pooling.
ModelGraph prepare_for_quant(const ModelGraph& g, const QuantPrepOptions& opts = {});

/// Attaches a bit-width search over `bits` to every convolution/linear layer,
/// with uniform logits.
void attach_bit_search(ModelGraph& g, const std::vector<int>& bits = {2, 4, 8});

/// tau(e) = 5 * exp(-0.0045 e).
double tau_schedule(int epoch);

/// Sum over layers of param_count * expected bits under softmax(theta / tau).
/// Frozen layers count their chosen precision and unquantized layers 32 bits.
double bit_cost(const ModelGraph& g, double tau);
/// Adds scale * d(bit_cost)/d(theta) and returns bit_cost.
double bit_cost_backward(ModelGraph& g, double scale, double tau);

/// Fixes each layer at its argmax precision (lowest bit-width on ties).
void freeze_precision(ModelGraph& g);

struct LayerPrecision {
  std::string id;
  std::size_t params = 0;
  int bits = 0;  // frozen or current argmax
  std::vector<double> mix;
};
std::vector<LayerPrecision> summarize_precision(const ModelGraph& g, double tau = 1.0);

/// Integer export of a frozen graph. Throws when a layer is still searching
/// or a convolution input is not quantized.
QuantizedModel export_quantized(const ModelGraph& g);

}  // namespace bpc
