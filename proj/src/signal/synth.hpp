// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "signal/records.hpp"

namespace bpc {

/// Beat morphology of the synthetic pressure pulse: a systolic Gaussian and a
/// smaller, wider dicrotic Gaussian whose sum peaks at 1 and starts near 0.
struct PulseShape {
  double sys_center = 0.18;
  double sys_width = 0.07;
  double dic_center = 0.38;
  double dic_width = 0.10;
  double dic_amp = 0.30;

  double raw(double phase) const;
  double peak() const;  // maximum of raw over one cycle
};

/// Per-subject ground truth drawn by the generator.
struct SynthTruth {
  double sbp = 0.0;
  double dbp = 0.0;
  double hr = 0.0;
  double lag_s = 0.0;
  double offset = 0.0;  // label shift not visible in the PPG
};

struct SynthOptions {
  double fs = 125.0;
  double seconds = 60.0;
  /// Standard deviation of a per-subject pressure offset applied to the ABP
  /// but not to the PPG, mimicking inter-subject calibration differences.
  double offset_std = 0.0;
  double abp_noise = 0.2;  // mmHg
  double ppg_noise = 0.01;
  double drift = 0.5;  // mmHg, slow beat-to-beat variation
};

struct SynthCohort {
  std::vector<SubjectRecord> records;
  std::vector<SynthTruth> truth;
};

/// Deterministic under `seed`: SBP in [90,180], DBP in [50,110] (at least 20
/// below SBP), HR in [40,130] BPM per subject.
SynthCohort synth_generate(int n_subjects, std::uint64_t seed, const SynthOptions& opts = {});

/// Clean pressure waveform of identical beats starting at a beat onset. The
/// beat length is rounded to whole samples and every beat's samples span
/// exactly [dbp, sbp].
std::vector<double> abp_waveform(double sbp, double dbp, double hr, double fs, double seconds,
                                 const PulseShape& shape = {});

}  // namespace bpc
