// SPDX-License-Identifier: Apache-2.0
#include "eval/filter.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <spdlog/spdlog.h>

#include "core/tensor.hpp"

namespace bpc {

namespace {

using cd = std::complex<double>;

// Steady-state state of one section for a unit step input.
std::array<double, 2> section_zi(const Sos& s) {
  const double g = (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
  const double z2 = s[2] - s[5] * g;
  const double z1 = s[1] - s[4] * g + z2;
  return {z1, z2};
}

std::vector<double> run(std::span<const Sos> sos, std::vector<double> x, double x0) {
  double scale = x0;
  for (const Sos& s : sos) {
    auto z = section_zi(s);
    z[0] *= scale;
    z[1] *= scale;
    for (double& v : x) {
      const double y = s[0] * v + z[0];
      z[0] = s[1] * v - s[4] * y + z[1];
      z[1] = s[2] * v - s[5] * y;
      v = y;
    }
    scale *= (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
  }
  return x;
}

}  // namespace

std::vector<Sos> butter_lowpass(int order, double cutoff_hz, double fs) {
  if (order < 1) throw Error("butter_lowpass: order must be positive");
  if (!(fs > 0.0) || !(cutoff_hz > 0.0) || cutoff_hz >= fs / 2.0)
    throw Error("butter_lowpass: cutoff must lie in (0, fs/2)");
  const double k = 2.0 * fs;
  const double wa = k * std::tan(std::numbers::pi * cutoff_hz / fs);
  std::vector<Sos> out;
  // Poles in the upper half plane; conjugates are implied.
  for (int i = 1; i <= order / 2; ++i) {
    const double th = std::numbers::pi * (2.0 * i + order - 1) / (2.0 * order);
    const cd s = wa * cd(std::cos(th), std::sin(th));
    const cd z = (k + s) / (k - s);
    Sos sec = {1.0, 2.0, 1.0, 1.0, -2.0 * z.real(), std::norm(z)};
    const double g = (sec[3] + sec[4] + sec[5]) / 4.0;
    for (int j = 0; j < 3; ++j) sec[j] *= g;
    out.push_back(sec);
  }
  if (order % 2 == 1) {
    const double z = (k - wa) / (k + wa);
    const double g = (1.0 - z) / 2.0;
    out.push_back({g, g, 0.0, 1.0, -z, 0.0});
  }
  return out;
}

std::vector<double> sosfilt(std::span<const Sos> sos, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (const Sos& s : sos) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y) {
      const double o = s[0] * v + z1;
      z1 = s[1] * v - s[4] * o + z2;
      z2 = s[2] * v - s[5] * o;
      v = o;
    }
  }
  return y;
}

std::vector<double> sosfiltfilt(std::span<const Sos> sos, std::span<const double> x) {
  if (x.empty()) return {};
  const int n = static_cast<int>(x.size());
  // Pad length of 3 * (filter order + 1), counting first-order sections once.
  int b2_zero = 0, a2_zero = 0;
  for (const Sos& s : sos) {
    b2_zero += s[2] == 0.0;
    a2_zero += s[5] == 0.0;
  }
  const int ntaps = 2 * static_cast<int>(sos.size()) + 1 - std::min(b2_zero, a2_zero);
  const int pad = std::min(3 * ntaps, n - 1);
  std::vector<double> ext;
  ext.reserve(static_cast<std::size_t>(n + 2 * pad));
  for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<std::size_t>(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int i = 1; i <= pad; ++i) ext.push_back(2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(n - 1 - i)]);
  const double x0 = ext.front();
  auto fwd = run(sos, std::move(ext), x0);
  std::reverse(fwd.begin(), fwd.end());
  const double y0 = fwd.front();
  auto back = run(sos, std::move(fwd), y0);
  std::reverse(back.begin(), back.end());
  return {back.begin() + pad, back.begin() + pad + n};
}

double sos_gain(std::span<const Sos> sos, double f, double fs) {
  const cd zi = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);  // z^-1
  cd h = 1.0;
  for (const Sos& s : sos) h *= (s[0] + s[1] * zi + s[2] * zi * zi) / (s[3] + s[4] * zi + s[5] * zi * zi);
  return std::abs(h);
}

double adaptive_cutoff(std::span<const double> x, double fs, const SmoothOptions& opts, bool* clamped) {
  if (x.empty()) throw Error("smooth_output: empty series");
  double m = 0.0;
  for (double v : x) m += std::abs(v);
  m /= static_cast<double>(x.size());
  const double raw = opts.coeff * m;
  const double fc = std::clamp(raw, opts.min_cutoff, opts.max_cutoff_frac * fs);
  if (clamped) *clamped = fc != raw;
  return fc;
}

std::vector<double> smooth_output(std::span<const double> x, double fs, const SmoothOptions& opts) {
  bool clamped = false;
  const double fc = adaptive_cutoff(x, fs, opts, &clamped);
  if (clamped) spdlog::warn("smooth_output: adaptive cutoff clamped to {:.3g} Hz", fc);
  return sosfiltfilt(butter_lowpass(opts.order, fc, fs), x);
}

}  // namespace bpc
