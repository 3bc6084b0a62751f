// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/trainer.hpp"
#include "eval/metrics.hpp"
#include "eval/pareto.hpp"
#include "pipeline/config.hpp"
#include "pipeline/data.hpp"

namespace bpc {

/// One trained model of a sweep with its metrics.
struct Candidate {
  std::string ref;  // path of the artifact directory relative to the fold root
  ParetoPoint point;  // test-fold MAE, stage-native cost
  MetricsReport val;
  MetricsReport test;
};

/// Everything a stage needs: configuration, preprocessed cohort and the fold.
struct StageContext {
  ExperimentConfig cfg;
  Cohort cohort;
  FoldData fold;
  std::filesystem::path root;  // <out_dir>/fold<k>

  explicit StageContext(const ExperimentConfig& c);
};

/// (SBP, DBP) estimates of a model on windows. Value models are
/// de-normalized; waveform models are de-normalized, smoothed and labeled.
std::vector<Estimate> predict_bp(ModelGraph& g, const std::vector<const Window*>& ws, const Cohort& c, double smooth_coeff);

MetricsReport evaluate_windows(ModelGraph& g, const std::vector<const Window*>& ws, const Cohort& c, double smooth_coeff);

/// Trains the seed architecture (or loads it when already trained).
Candidate train_seed(StageContext& ctx);

/// Stage-input selection from earlier candidates, using validation MAE:
/// lowest SBP, lowest DBP, the seed, and optionally the smallest
/// Pareto-optimal model (by weight bits). Duplicates are removed.
std::vector<std::string> select_inputs(const std::vector<Candidate>& pool, bool include_smallest);

/// NAS sweep over cfg.nas_lambdas starting from the trained seed.
std::vector<Candidate> run_nas(StageContext& ctx);
/// PIT sweep over cfg.pit_lambdas for each input model reference.
std::vector<Candidate> run_pit(StageContext& ctx, const std::vector<std::string>& inputs);
/// MPS sweep over cfg.mps_lambdas for each input model reference.
std::vector<Candidate> run_mps(StageContext& ctx, const std::vector<std::string>& inputs);

/// Runs one stage ("seed", "nas", "pit" or "mps") of the flow, reading the
/// candidates of earlier stages from disk. Missing prerequisites are errors
/// that name the missing files. Returns the stage's candidates.
std::vector<Candidate> run_stage(StageContext& ctx, const std::string& stage);

/// Candidates persisted by a stage; throws when the stage has not run.
std::vector<Candidate> load_candidates(const std::filesystem::path& root, const std::string& stage);

ModelGraph load_model(const std::filesystem::path& root, const std::string& ref);

/// Parameter count (float) or frozen weight bits (quantized) of a saved model.
ParetoPoint recompute_cost(const std::filesystem::path& root, const Candidate& c);

}  // namespace bpc
