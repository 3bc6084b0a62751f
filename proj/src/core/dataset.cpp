// SPDX-License-Identifier: Apache-2.0
#include "core/dataset.hpp"

#include <algorithm>

namespace bpc {

Tensor gather_rows(const Tensor& t, std::span<const int> idx) {
  if (t.rank() != 3) throw Error("gather_rows expects a rank-3 tensor");
  const std::size_t row = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  Tensor out({static_cast<int>(idx.size()), t.dim(1), t.dim(2)});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= t.dim(0)) throw Error("row index out of range");
    const auto src = t.data().subspan(static_cast<std::size_t>(idx[k]) * row, row);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * row));
  }
  return out;
}

Dataset Dataset::subset(std::span<const int> idx) const {
  Dataset d{gather_rows(x, idx), gather_rows(y, idx), {}};
  if (!subject.empty())
    for (int i : idx) d.subject.push_back(subject.at(static_cast<std::size_t>(i)));
  return d;
}

Tensor Dataset::batch_x(std::span<const int> idx) const { return gather_rows(x, idx); }
Tensor Dataset::batch_y(std::span<const int> idx) const { return gather_rows(y, idx); }

}  // namespace bpc
