// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/graph.hpp"

namespace bpc {

/// Where a channel's keep/drop decision lives: slot `slot` of mask parameter
/// `param`, or nowhere (param == -1) for channels that can never be pruned.
struct GateRef {
  int param = -1;
  int slot = 0;
};

/// Per node, the gate of every output channel. Requires masks to be attached.
std::vector<std::vector<GateRef>> channel_gates(const ModelGraph& g);

/// Adds one mask (theta = +1) per prunable channel space and gates the layers
/// that produce or offset those channels. Channel spaces joined by a residual
/// add share one mask; grouped convolutions share slots across groups.
void attach_masks(ModelGraph& g);

/// Names of the mask parameters in `g`.
std::vector<int> mask_params(const ModelGraph& g);

/// Parameter count of the network with each channel weighted by its binary
/// gate. Equals the exported parameter count when evaluated on binary masks.
double mask_cost(const ModelGraph& g);
/// Adds scale * d(mask_cost)/d(theta) (straight-through) and returns mask_cost.
double mask_cost_backward(ModelGraph& g, double scale);

/// Ensures every mask keeps at least one slot; returns the number of masks fixed.
int clamp_masks(ModelGraph& g);

/// Physically removes gated-off channels and drops every mask.
ModelGraph export_pruned(const ModelGraph& g);

struct MaskSummary {
  std::string node;
  int kept = 0;
  int total = 0;
};
/// Retained output channels of every gated layer.
std::vector<MaskSummary> summarize_masks(const ModelGraph& g);

}  // namespace bpc
