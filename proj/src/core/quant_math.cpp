// SPDX-License-Identifier: Apache-2.0
#include "core/quant_math.hpp"

#include <algorithm>

#include "core/tensor.hpp"

namespace bpc {

std::int32_t AffineGrid::code(double w) const {
  if (degenerate()) return 0;
  const double q = round_half_away((w - min) / scale);
  return static_cast<std::int32_t>(std::clamp(q, 0.0, static_cast<double>(levels())));
}

double AffineGrid::dequant(std::int32_t c) const {
  if (degenerate()) return min;
  // The top level is pinned to max so that re-quantizing a quantized tensor
  // recovers the same grid bit-for-bit.
  if (c == levels()) return max;
  return static_cast<double>(c) * scale + min;
}

AffineGrid minmax_grid(std::span<const double> w, int bits) {
  if (bits < 1 || bits > 16) throw Error("unsupported bit-width " + std::to_string(bits));
  AffineGrid g;
  g.bits = bits;
  if (w.empty()) return g;
  auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  g.min = *lo;
  g.max = *hi;
  g.scale = (g.max - g.min) / static_cast<double>(g.levels());
  return g;
}

std::vector<double> fake_quant_minmax(std::span<const double> w, int bits) {
  const AffineGrid g = minmax_grid(w, bits);
  std::vector<double> out(w.begin(), w.end());
  if (g.degenerate()) return out;
  for (double& v : out) v = g.dequant(g.code(v));
  return out;
}

std::int32_t pact_code(double x, double alpha, int bits) {
  const double clipped = std::clamp(x, -alpha, alpha);
  return requant_clamp(clipped / pact_scale(alpha, bits), bits);
}

double pact_value(double x, double alpha, int bits) {
  return static_cast<double>(pact_code(x, alpha, bits)) * pact_scale(alpha, bits);
}

}  // namespace bpc
