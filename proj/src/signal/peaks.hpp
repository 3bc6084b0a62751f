// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace bpc {

struct PeakOptions {
  int min_distance = 1;        // samples between kept peaks
  double min_prominence = 0.0;  // absolute units
};

/// Local maxima filtered by topographic prominence, then thinned so that no
/// two kept peaks are closer than `min_distance` (taller peaks win).
/// Returned indices are increasing.
std::vector<int> find_peaks(std::span<const double> x, const PeakOptions& opts);

/// Prominence of the local maximum at index `i`.
double peak_prominence(std::span<const double> x, int i);

/// Index of the minimum strictly between each pair of consecutive peaks.
std::vector<int> valleys_between(std::span<const double> x, std::span<const int> peaks);

/// Peak detection tuned for cardiac waveforms sampled at `fs`: minimum
/// distance from the fastest plausible rhythm and prominence relative to the
/// window range.
std::vector<int> detect_beats(std::span<const double> x, double fs, double max_bpm = 220.0,
                              double rel_prominence = 0.1);

/// Beats per minute from the median peak-to-peak interval; 0 with fewer than two peaks.
double heart_rate_bpm(std::span<const int> peaks, double fs);

double median(std::vector<double> v);

}  // namespace bpc
