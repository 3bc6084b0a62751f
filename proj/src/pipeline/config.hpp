// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipeline/seeds.hpp"

namespace bpc {

/// `n` values spaced evenly in log10 between lo and hi, inclusive.
std::vector<double> log_grid(double lo, double hi, int n);

struct DataConfig {
  std::string source = "synth";  // synth or csv
  std::string csv_dir;           // per-subject CSV files when source == csv
  int n_subjects = 40;
  double seconds = 300.0;
  double offset_std = 0.0;  // per-subject pressure offset of the synthetic cohort
  std::uint64_t seed = 7;
  /// Block-average downsampling of the 5 s windows before training (1 = off).
  int decimate = 1;
};

struct TrainingConfig {
  int warmup_epochs = 20;
  int search_epochs = 200;
  int finetune_epochs = 200;
  int patience = 40;
  double lr_w = 1e-3;
  double lr_theta = 1e-2;
  int batch_size = 32;
  bool alternate = true;  // theta on validation batches, per-batch alternation
};

struct FinetuneConfig {
  std::string mode = "temporal";  // temporal or shuffled
  double train_frac = 0.8;        // 0.8 or 0.2
  int epochs = 200;
  double lr = 1e-3;
};

struct ExperimentConfig {
  SeedOptions seed_arch;
  DataConfig data;
  TrainingConfig train;
  FinetuneConfig finetune;
  int folds = 5;
  int fold = 0;
  std::vector<double> nas_lambdas = log_grid(1e-11, 1e-7, 18);
  std::vector<double> pit_lambdas = log_grid(1e-11, 1e-7, 18);
  std::vector<double> mps_lambdas = log_grid(1e-11, 1e-7, 9);
  std::vector<int> mps_bits = {2, 4, 8};
  /// Also carry the smallest Pareto-optimal model into the next stage.
  bool select_smallest = false;
  double smooth_coeff = 0.1;
  std::string out_dir = "bpc_out";
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  /// Fields missing from `j` keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& p);
  void save(const std::filesystem::path& p) const;
  /// Throws on inconsistent settings (for example unet1d on label-only data).
  void validate() const;
  std::string task() const { return seed_task(seed_arch.arch); }
};

/// Applies a dotted-path override such as "train.patience=10" or
/// "nas_lambdas=[1e-6,1e-5]"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

}  // namespace bpc
