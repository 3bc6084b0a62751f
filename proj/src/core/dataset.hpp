// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace bpc {

/// Paired model inputs (N, C, L) and targets (N, T, Ly), optionally tagged by subject.
struct Dataset {
  Tensor x;
  Tensor y;
  std::vector<std::string> subject;

  int size() const { return x.empty() ? 0 : x.dim(0); }
  Dataset subset(std::span<const int> idx) const;
  Tensor batch_x(std::span<const int> idx) const;
  Tensor batch_y(std::span<const int> idx) const;
};

/// Rows `idx` of a rank-3 tensor, stacked along the first axis.
Tensor gather_rows(const Tensor& t, std::span<const int> idx);

}  // namespace bpc
