// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "core/params.hpp"

namespace bpc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed subset of a ParamStore. Per-parameter weight decay is
/// applied as an L2 term added to the gradient.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<int> params, AdamConfig cfg);

  void step(ParamStore& ps);
  const std::vector<int>& params() const { return idx_; }
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }

 private:
  std::vector<int> idx_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace bpc
