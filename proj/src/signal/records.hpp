// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bpc {

/// One subject's synchronized recordings.
struct SubjectRecord {
  std::string id;
  double fs = 125.0;
  std::vector<double> ppg;
  std::vector<double> abp;  // mmHg; may be empty for label-only data
  /// Cuff-style (SBP, DBP) reference used when no ABP waveform exists.
  std::optional<std::pair<double, double>> bp;
};

/// A 5 s analysis window with labels and the outcome of the plausibility checks.
struct Window {
  std::string subject;
  int index = 0;  // position within the subject's record
  std::vector<double> ppg;
  std::vector<double> abp;
  double sbp = 0.0;
  double dbp = 0.0;
  double hr = 0.0;
  bool valid = false;
  std::string reason;  // empty when valid
};

}  // namespace bpc
