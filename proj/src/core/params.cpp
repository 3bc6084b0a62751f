// SPDX-License-Identifier: Apache-2.0
#include "core/params.hpp"

namespace bpc {

const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::Weight: return "weight";
    case ParamRole::Arch: return "arch";
    case ParamRole::Buffer: return "buffer";
  }
  return "weight";
}

ParamRole role_from_name(std::string_view s) {
  if (s == "weight") return ParamRole::Weight;
  if (s == "arch") return ParamRole::Arch;
  if (s == "buffer") return ParamRole::Buffer;
  throw Error("unknown parameter role '" + std::string(s) + "'");
}

int ParamStore::add(std::string name, Tensor value, ParamRole role, double weight_decay) {
  if (by_name_.count(name)) throw Error("duplicate parameter name '" + name + "'");
  const int idx = size();
  by_name_.emplace(name, idx);
  params_.push_back(Param{std::move(name), std::move(value), role, weight_decay});
  return idx;
}

int ParamStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? -1 : it->second;
}

int ParamStore::require(std::string_view name) const {
  const int i = find(name);
  if (i < 0) throw Error("missing parameter '" + std::string(name) + "'");
  return i;
}

std::vector<int> ParamStore::indices(ParamRole role) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (params_[static_cast<std::size_t>(i)].role == role) out.push_back(i);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_)
    if (p.role != ParamRole::Buffer) p.value.zero_grad();
}

int ParamStore::import(const ParamStore& from, int idx) {
  const Param& p = from.at(idx);
  if (int existing = find(p.name); existing >= 0) return existing;
  Tensor copy(p.value.shape(), std::vector<double>(p.value.data().begin(), p.value.data().end()));
  return add(p.name, std::move(copy), p.role, p.weight_decay);
}

}  // namespace bpc
