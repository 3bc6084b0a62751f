// SPDX-License-Identifier: Apache-2.0
#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace bpc {

std::string shape_str(const Shape& s) { return fmt::format("({})", fmt::join(s, ", ")); }

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw Error("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 3) throw Error("tensor rank above 3: " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.size() > 3) throw Error("tensor rank above 3: " + shape_str(shape_));
  if (data_.size() != shape_numel(shape_))
    throw Error(fmt::format("tensor {} given {} values", shape_str(shape_), data_.size()));
}

void Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_.empty())
    grad_.assign(data_.size(), 0.0);
  else
    std::fill(grad_.begin(), grad_.end(), 0.0);
}

std::span<double> Tensor::grad() {
  if (grad_.empty()) throw Error("tensor " + shape_str(shape_) + " has no gradient slot");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (grad_.empty()) throw Error("tensor " + shape_str(shape_) + " has no gradient slot");
  return grad_;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace bpc
