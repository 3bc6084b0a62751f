// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/graph.hpp"

namespace bpc {

/// Folds every normalization whose producer is an ungated, unquantized
/// convolution consumed only by that normalization. Uses running statistics,
/// so the result matches the graph's eval-mode forward. Returns the count folded.
int fold_norms(ModelGraph& g);

/// Replaces each remaining normalization by its eval-mode equivalent: a
/// depthwise 1x1 convolution. Returns the count converted.
int norms_to_depthwise(ModelGraph& g);

}  // namespace bpc
