// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace bpc {

struct Estimate {
  double sbp = 0.0;
  double dbp = 0.0;
};

/// Error statistics of one target; errors are pred - truth.
struct ErrorStats {
  double mae = 0.0;
  double me = 0.0;
  double std = 0.0;  // population standard deviation of the errors
};

struct MetricsReport {
  int n_windows = 0;
  int n_subjects = 0;
  ErrorStats sbp;
  ErrorStats dbp;
  std::map<std::string, MetricsReport> per_subject;  // empty when no subject tags

  nlohmann::json to_json() const;
};

ErrorStats error_stats(std::span<const double> pred, std::span<const double> truth);

/// Errors over all pairs; with subject tags the report also holds a
/// breakdown per subject. Throws on empty or mismatched input.
MetricsReport compute_mae(std::span<const Estimate> pred, std::span<const Estimate> truth,
                          std::span<const std::string> subjects = {});

struct AamiResult {
  bool pass = false;
  std::string note;
};

inline constexpr int kAamiMinSubjects = 85;

/// Passes iff |me| <= 5 mmHg and std <= 8 mmHg. A cohort caveat is attached
/// whenever fewer than 85 subjects were evaluated.
AamiResult aami_check(double me, double std, int n_subjects);

/// Both targets must pass.
AamiResult aami_check(const MetricsReport& r);

/// SBP/DBP of a predicted pressure waveform after adaptive smoothing, using
/// the same beat detector and medians as the reference labels. Empty when
/// fewer than three beats are found.
std::optional<Estimate> labels_from_waveform(std::span<const double> wave, double fs, double smooth_coeff = 0.1);

}  // namespace bpc
