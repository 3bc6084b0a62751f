// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"
#include "core/graph.hpp"
#include "intrt/qmodel.hpp"

namespace bpc {

/// Signed activation codes of a (N, C, L) tensor with one step size.
struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> codes;
  double scale = 0.0;
};

/// Quantizes a real input window with the model's input quantizer.
IntTensor quantize_input(const QuantizedModel& m, const Tensor& x);

/// Integer reference execution. Convolutions accumulate int32 products of
/// weight and activation codes; requantization and the few real-valued joins
/// (add, average pooling, concatenation) follow the shared rounding rule.
/// Returns the real-valued outputs of the head.
Tensor int_forward(const QuantizedModel& m, const IntTensor& x);

inline Tensor int_predict(const QuantizedModel& m, const Tensor& x) { return int_forward(m, quantize_input(m, x)); }

}  // namespace bpc
