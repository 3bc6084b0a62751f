// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/graph.hpp"

namespace bpc {

/// One row of the per-layer table of an optimized model.
struct LayerSummary {
  std::string layer;
  std::string op;  // C, DW, ID (bypassed) or the layer kind when no search chose it
  bool bypassed = false;
  int kept = 0;  // output channels retained by pruning
  int total = 0;  // output channels before pruning
  double retained = 1.0;
  int bits = 32;  // weight precision (32 for float layers)
  std::size_t params = 0;
};

std::vector<LayerSummary> summarize_layers(const ModelGraph& g);

std::string layers_csv(const std::vector<LayerSummary>& rows);

/// Writes layers.csv next to every model.json found under `root` and a
/// global models.csv (stage, reference, params, bits, MAE) at the root.
/// Returns the number of models summarized.
int summarize_outputs(const std::filesystem::path& root);

}  // namespace bpc
