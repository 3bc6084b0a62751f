// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "eval/metrics.hpp"
#include "pipeline/config.hpp"
#include "signal/records.hpp"
#include "signal/splits.hpp"

namespace bpc {

/// Target normalization stored with every trained model.
struct TargetNorm {
  std::vector<double> mean;  // per target channel
  std::vector<double> std;
  nlohmann::json to_json() const;
  static TargetNorm from_json(const nlohmann::json& j);
};

/// Valid windows of the whole cohort plus the model-facing geometry.
struct Cohort {
  std::vector<Window> windows;  // grouped by subject, in record order
  std::vector<std::string> subjects;
  double fs = 125.0;      // of the stored windows
  int decimate = 1;
  int input_length = 0;   // samples per model input after decimation and cropping
  double model_fs() const { return fs / decimate; }
};

std::vector<SubjectRecord> load_records(const DataConfig& d);

/// Aligns, segments and screens every record; invalid windows are dropped.
/// `arch` decides the cropping needed by the seed (U-Net lengths must divide
/// by 2^(stages-1)). Throws when a waveform task meets label-only records.
Cohort build_cohort(const std::vector<SubjectRecord>& records, const ExperimentConfig& cfg);

/// Model input of a window: block-averaged, cropped and z-scored PPG.
std::vector<double> window_input(const Window& w, const Cohort& c);
/// Reference pressure waveform of a window at model resolution.
std::vector<double> window_pressure(const Window& w, const Cohort& c);

/// Normalization statistics of the given windows for the task.
TargetNorm fit_target_norm(const std::vector<const Window*>& ws, const Cohort& c, const std::string& task);

Dataset make_dataset(const std::vector<const Window*>& ws, const Cohort& c, const std::string& task,
                     const TargetNorm& norm);

std::vector<const Window*> windows_of(const Cohort& c, const std::vector<std::string>& subjects);

/// Subject split, per-fold window sets and datasets for one fold.
struct FoldData {
  SplitDataset split;
  Fold fold;
  std::vector<const Window*> train_w, val_w, test_w;
  TargetNorm norm;
  Dataset train, val, test;
};

FoldData make_fold(const Cohort& c, const ExperimentConfig& cfg);

}  // namespace bpc
