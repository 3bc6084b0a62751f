// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/graph.hpp"

namespace bpc {

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst;  // "<param>[i]" or "input[i]"
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries whose step straddles a kink (see kink_tol)
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps round-off on vanishing
/// gradients from registering as a relative error.
double grad_rel_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t max_entries = 64;  // per tensor, spread evenly
  bool check_input = true;
  std::vector<ParamRole> roles{ParamRole::Weight, ParamRole::Arch};
  std::uint64_t seed = 7;
  /// When positive, entries whose forward and backward one-sided slopes
  /// differ by more than this (relative) lie within eps of a point where the
  /// loss is not differentiable (ReLU, clipping, max-pool ties). They are
  /// counted as skipped instead of compared.
  double kink_tol = 0.0;
};

/// Compares analytic gradients of L = sum(r * graph(x)), r a fixed random
/// projection, against central finite differences.
GradCheckReport grad_check(ModelGraph& g, const Tensor& x, const RunOptions& opts, const GradCheckOptions& o = {});

/// Generic form: `loss` evaluates the scalar, `grads` repopulates analytic gradients.
GradCheckReport grad_check_params(ParamStore& ps, const std::vector<int>& which, const std::function<double()>& loss,
                                  const std::function<void()>& grads, double eps, std::size_t max_entries,
                                  double kink_tol = 0.0);

}  // namespace bpc
