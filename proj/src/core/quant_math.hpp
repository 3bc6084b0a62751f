// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace bpc {

/// The single rounding rule shared by fake-quantization, export and the
/// integer runtime: ties go away from zero.
inline double round_half_away(double v) { return std::round(v); }

/// Min-max affine grid of a weight tensor at a given bit-width.
struct AffineGrid {
  double min = 0.0;
  double max = 0.0;
  double scale = 0.0;  // 0 for a degenerate (constant) tensor
  int bits = 8;

  int levels() const { return (1 << bits) - 1; }
  bool degenerate() const { return scale == 0.0; }
  std::int32_t code(double w) const;
  double dequant(std::int32_t code) const;
};

AffineGrid minmax_grid(std::span<const double> w, int bits);

/// q = clamp(round((w - min)/s), 0, 2^b - 1), w' = q*s + min; constant tensors pass through.
std::vector<double> fake_quant_minmax(std::span<const double> w, int bits);

/// Signed PaCT step for clip `alpha`: 2^b levels in [-2^(b-1), 2^(b-1) - 1].
inline double pact_scale(double alpha, int bits) { return alpha / static_cast<double>(1 << (bits - 1)); }
inline int pact_qmin(int bits) { return -(1 << (bits - 1)); }
inline int pact_qmax(int bits) { return (1 << (bits - 1)) - 1; }

/// Integer code of x after clipping to [-alpha, alpha].
std::int32_t pact_code(double x, double alpha, int bits);
double pact_value(double x, double alpha, int bits);

/// Terms of a frozen-precision convolution evaluated on integer codes.
/// The real-valued output is sw_sx*A + b_step*b_int + zx*S with A = sum(w_code*x_code)
/// and S = sum(x_code) over the receptive field; the training graph and the integer
/// runtime both evaluate exactly this expression.
struct AffineConvTerms {
  double sw_sx = 0.0;
  double b_step = 0.0;
  double zx = 0.0;
};

inline AffineConvTerms affine_conv_terms(const AffineGrid& g, double s_x) {
  return {g.scale * s_x, g.degenerate() ? s_x : g.scale * s_x, g.min * s_x};
}

inline double affine_conv_output(const AffineConvTerms& t, std::int64_t a, std::int64_t s, std::int64_t b_int) {
  return t.sw_sx * static_cast<double>(a) + t.b_step * static_cast<double>(b_int) + t.zx * static_cast<double>(s);
}

/// Clamp to signed 8-bit activation range with the shared rounding rule.
inline std::int32_t requant_clamp(double v, int bits = 8) {
  const double r = round_half_away(v);
  const double lo = pact_qmin(bits), hi = pact_qmax(bits);
  return static_cast<std::int32_t>(r < lo ? lo : (r > hi ? hi : r));
}

}  // namespace bpc
