// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/graph.hpp"

namespace bpc {

/// Replaces every convolution (except the output head) with a choice site
/// over {C, DW} plus ID when the site preserves shape. Alternatives start
/// from the seed's weights where shapes allow; theta starts uniform.
ModelGraph build_supernet(const ModelGraph& seed, std::uint64_t rng_seed = 1);

/// Sum over sites of softmax(theta)-weighted alternative costs plus the
/// parameter count of every layer outside the choice sites.
double expected_cost(const ModelGraph& g);

/// Adds scale * d(expected_cost)/d(theta) to the theta gradients and returns expected_cost.
double expected_cost_backward(ModelGraph& g, double scale);

/// Keeps the argmax alternative of every site (lowest index on ties).
ModelGraph extract_architecture(const ModelGraph& supernet);

struct ChoiceSummary {
  std::string site;
  std::vector<std::string> labels;
  std::vector<double> probabilities;
  int selected = 0;
};
std::vector<ChoiceSummary> summarize_choices(const ModelGraph& g);

}  // namespace bpc
