// SPDX-License-Identifier: Apache-2.0
#include "core/optim.hpp"

#include <cmath>

namespace bpc {

Adam::Adam(std::vector<int> params, AdamConfig cfg) : idx_(std::move(params)), cfg_(cfg) {
  m_.resize(idx_.size());
  v_.resize(idx_.size());
}

void Adam::step(ParamStore& ps) {
  for (int i : idx_)
    if (!ps.value(i).has_grad()) throw Error("parameter '" + ps.at(i).name + "' has no gradient");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < idx_.size(); ++k) {
    Param& p = ps.at(idx_[k]);
    auto w = p.value.data();
    auto g = p.value.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != w.size()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + p.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace bpc
