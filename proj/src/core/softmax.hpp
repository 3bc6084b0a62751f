// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace bpc {

/// softmax(z / temperature), shifted by the maximum for stability.
inline std::vector<double> softmax(std::span<const double> z, double temperature = 1.0) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - m) / temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Given dL/dp for p = softmax(z / T), accumulates dL/dz into `dz`.
inline void softmax_backward(std::span<const double> p, std::span<const double> dp, double temperature,
                             std::span<double> dz) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] += p[i] * (dp[i] - dot) / temperature;
}

/// Index of the largest entry; the lowest index wins ties.
inline int argmax_first(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace bpc
