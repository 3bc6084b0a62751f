// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "signal/records.hpp"

namespace bpc {

/// Plausibility bounds and detector settings for window screening.
struct WindowRules {
  double window_s = 5.0;
  double abp_min = 30.0;
  double abp_max = 220.0;
  double min_pulse_pressure = 10.0;  // strictly greater is required
  double hr_min = 35.0;
  double hr_max = 140.0;
  int min_beats = 3;
  double ppg_rel_std = 0.25;  // peak and valley amplitude spread limit
  double max_detect_bpm = 220.0;
  double rel_prominence = 0.1;
  double max_lag_s = 2.0;
};

struct Labels {
  double sbp = 0.0;
  double dbp = 0.0;
  int beats = 0;
};

/// Lag `s` maximizing the Pearson correlation of ppg[t] and abp[t + s] over
/// |s| <= max_lag_s * fs. A positive lag means the ABP trails the PPG.
/// The signed correlation is maximized, so anti-correlated pairs are not
/// treated as aligned.
int align_xcorr(std::span<const double> ppg, std::span<const double> abp, double fs, double max_lag_s = 2.0);

/// Shifts the record by `lag` (as returned by align_xcorr) and trims both
/// series to the overlap.
void apply_alignment(SubjectRecord& rec, int lag);

/// SBP = median of detected systolic peaks, DBP = median of the minima
/// between consecutive peaks. `beats` is the peak count; fewer than three
/// beats leaves sbp/dbp at zero.
Labels extract_labels(std::span<const double> abp, double fs, const WindowRules& rules = {});

/// Subtracts a cubic spline through the beat valleys of a PPG segment.
/// Outside the first and last valley the baseline is held constant.
std::vector<double> baseline_correct(std::span<const double> ppg, double fs, const WindowRules& rules = {});

/// Runs the plausibility checks on one window and fills labels, hr, valid
/// and reason ("amplitude", "beats", "hr", "pulse pressure", "ppg").
void screen_window(Window& w, double fs, const WindowRules& rules = {});

/// Non-overlapping windows of window_s * fs samples, screened, labeled and
/// baseline-corrected. Records shorter than one window yield no windows.
std::vector<Window> segment_and_filter(const SubjectRecord& rec, const WindowRules& rules = {});

/// Alignment followed by segmentation.
std::vector<Window> preprocess_record(SubjectRecord rec, const WindowRules& rules = {});

}  // namespace bpc
