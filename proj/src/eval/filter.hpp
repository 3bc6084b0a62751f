// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <vector>

namespace bpc {

/// One second-order section {b0, b1, b2, a0, a1, a2} with a0 = 1.
using Sos = std::array<double, 6>;

/// Digital Butterworth low-pass of the given order as cascaded sections,
/// designed by the bilinear transform with cutoff prewarping. Each section
/// has unit gain at DC.
std::vector<Sos> butter_lowpass(int order, double cutoff_hz, double fs);

/// Causal filtering through the cascade (transposed direct form II).
std::vector<double> sosfilt(std::span<const Sos> sos, std::span<const double> x);

/// Forward-backward filtering with odd-reflection padding and steady-state
/// initial conditions, giving zero phase and unchanged length.
std::vector<double> sosfiltfilt(std::span<const Sos> sos, std::span<const double> x);

/// Magnitude of the cascade's frequency response at `f` Hz.
double sos_gain(std::span<const Sos> sos, double f, double fs);

struct SmoothOptions {
  int order = 5;
  double coeff = 0.1;  // Hz of cutoff per unit of mean |x|
  double min_cutoff = 1.0;
  double max_cutoff_frac = 0.45;  // of fs
};

/// Cutoff used by smooth_output: coeff * mean|x|, clamped to
/// [min_cutoff, max_cutoff_frac * fs]. `clamped` reports whether a bound applied.
double adaptive_cutoff(std::span<const double> x, double fs, const SmoothOptions& opts, bool* clamped = nullptr);

/// Zero-phase Butterworth low-pass of a reconstructed pressure waveform with
/// the adaptive cutoff. Logs a warning when the cutoff is clamped.
std::vector<double> smooth_output(std::span<const double> x, double fs, const SmoothOptions& opts = {});

}  // namespace bpc
