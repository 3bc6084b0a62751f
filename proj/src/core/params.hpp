// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "core/tensor.hpp"

namespace bpc {

/// Weight: network weights W (biases, norm affine, PReLU slopes, PaCT clips).
/// Arch: architecture parameters theta (NAS choices, pruning masks, bit-width logits).
/// Buffer: non-trainable state such as running statistics.
enum class ParamRole { Weight, Arch, Buffer };

const char* role_name(ParamRole r);
ParamRole role_from_name(std::string_view s);

struct Param {
  std::string name;
  Tensor value;
  ParamRole role = ParamRole::Weight;
  double weight_decay = 0.0;
};

/// Owns every tensor a graph trains or tracks. Layers refer to entries by index.
class ParamStore {
 public:
  int add(std::string name, Tensor value, ParamRole role, double weight_decay = 0.0);
  int find(std::string_view name) const;
  int require(std::string_view name) const;

  Param& at(int i) { return params_.at(static_cast<std::size_t>(i)); }
  const Param& at(int i) const { return params_.at(static_cast<std::size_t>(i)); }
  Tensor& value(int i) { return at(i).value; }
  const Tensor& value(int i) const { return at(i).value; }

  int size() const { return static_cast<int>(params_.size()); }
  std::vector<int> indices(ParamRole role) const;

  /// Zeroes (allocating if needed) the gradient of every non-buffer entry.
  void zero_grad();

  /// Copies entry `idx` of `from` into this store unless a same-named entry exists.
  int import(const ParamStore& from, int idx);

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, int> by_name_;
};

}  // namespace bpc
