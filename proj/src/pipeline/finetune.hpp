// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "eval/metrics.hpp"
#include "pipeline/config.hpp"
#include "pipeline/data.hpp"
#include "signal/splits.hpp"

namespace bpc {

struct FinetuneOutcome {
  std::string subject;
  FinetuneSplit split;        // indices into the subject's windows
  std::vector<int> eval_pre;  // window indices evaluated before and after;
  std::vector<int> eval_post;  // identical by construction, kept for auditing
  MetricsReport pre;
  MetricsReport post;
  int epochs_run = 0;
};

/// Throws when `subject` appears in the model's training or validation
/// subjects (recorded in its metadata at training time).
void check_no_leakage(const ModelGraph& model, const std::string& subject);

/// Subject-specific fine-tuning: evaluate on the evaluation part of the
/// subject's windows, fine-tune the weights (architecture, masks and
/// precisions stay frozen) on the training part, and evaluate again on the
/// same windows. With an empty training part the model is left untouched.
FinetuneOutcome finetune_subject(ModelGraph model, const Cohort& cohort, const std::string& subject,
                                 const ExperimentConfig& cfg, std::uint64_t seed = 0);

/// As above with an explicit split (used to exercise the empty-train case).
FinetuneOutcome finetune_subject_split(ModelGraph model, const Cohort& cohort, const std::string& subject,
                                       const FinetuneSplit& split, const ExperimentConfig& cfg, std::uint64_t seed = 0);

nlohmann::json to_json(const FinetuneOutcome& o);

struct StageContext;

/// Fine-tunes the model `ref` of the fold on each of the fold's test
/// subjects and writes `finetune/<ref>/results.json` (per subject plus the
/// median pre and post MAE). Returns the per-subject outcomes.
std::vector<FinetuneOutcome> finetune_fold(StageContext& ctx, const std::string& ref);

}  // namespace bpc
