// SPDX-License-Identifier: Apache-2.0
#include "pipeline/finetune.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "core/serialize.hpp"
#include "core/trainer.hpp"
#include "signal/peaks.hpp"
#include "pipeline/stages.hpp"

namespace bpc {

void check_no_leakage(const ModelGraph& model, const std::string& subject) {
  if (!model.meta.contains("train_subjects"))
    throw Error("model has no training manifest; cannot audit fine-tuning of " + subject);
  for (const char* key : {"train_subjects", "val_subjects"}) {
    if (!model.meta.contains(key)) continue;
    const auto ids = model.meta.at(key).get<std::vector<std::string>>();
    if (std::find(ids.begin(), ids.end(), subject) != ids.end())
      throw LeakageError("leakage: subject " + subject + " was used to train this model (" + key + ")");
  }
}

FinetuneOutcome finetune_subject(ModelGraph model, const Cohort& cohort, const std::string& subject,
                                 const ExperimentConfig& cfg, std::uint64_t seed) {
  check_no_leakage(model, subject);
  const auto ws = windows_of(cohort, {subject});
  const auto split = finetune_split(static_cast<int>(ws.size()), finetune_mode_from_name(cfg.finetune.mode),
                                    cfg.finetune.train_frac, seed);
  return finetune_subject_split(std::move(model), cohort, subject, split, cfg, seed);
}

FinetuneOutcome finetune_subject_split(ModelGraph model, const Cohort& cohort, const std::string& subject,
                                       const FinetuneSplit& split, const ExperimentConfig& cfg, std::uint64_t seed) {
  check_no_leakage(model, subject);
  const auto ws = windows_of(cohort, {subject});
  for (int i : split.train)
    if (std::find(split.eval.begin(), split.eval.end(), i) != split.eval.end())
      throw Error("fine-tuning split of " + subject + " is not disjoint");
  auto pick = [&](const std::vector<int>& idx) {
    std::vector<const Window*> out;
    for (int i : idx) out.push_back(ws.at(static_cast<std::size_t>(i)));
    return out;
  };
  const auto eval_w = pick(split.eval), train_w = pick(split.train);
  if (eval_w.empty()) throw Error("fine-tuning of " + subject + " has no evaluation windows");

  FinetuneOutcome o;
  o.subject = subject;
  o.split = split;
  o.eval_pre = split.eval;
  o.pre = evaluate_windows(model, eval_w, cohort, cfg.smooth_coeff);
  if (!train_w.empty()) {
    const std::string task = model.meta.at("task").get<std::string>();
    const Dataset train = make_dataset(train_w, cohort, task, TargetNorm::from_json(model.meta.at("norm")));
    PhaseConfig p;
    p.name = "subject-finetune";
    p.epochs = cfg.finetune.epochs;
    p.patience = cfg.train.patience;
    TrainConfig tc;
    tc.lr_w = cfg.finetune.lr;
    tc.batch_size = cfg.train.batch_size;
    tc.seed = seed;
    TrainLog log;
    // Checkpoints are chosen on the subject's training windows; the
    // evaluation windows are only touched before and after.
    o.epochs_run = train_phase(model, train, train, p, tc, {}, log).epochs_run;
  }
  o.eval_post = split.eval;
  o.post = evaluate_windows(model, eval_w, cohort, cfg.smooth_coeff);
  return o;
}

nlohmann::json to_json(const FinetuneOutcome& o) {
  return {{"subject", o.subject},   {"train", o.split.train},  {"eval", o.split.eval},
          {"pre", o.pre.to_json()}, {"post", o.post.to_json()}, {"epochs_run", o.epochs_run}};
}

std::vector<FinetuneOutcome> finetune_fold(StageContext& ctx, const std::string& ref) {
  const ModelGraph model = load_model(ctx.root, ref);
  std::vector<FinetuneOutcome> out;
  nlohmann::json subjects = nlohmann::json::array();
  std::vector<double> pre_s, post_s, pre_d, post_d;
  for (std::size_t i = 0; i < ctx.fold.fold.test.size(); ++i) {
    const auto& subject = ctx.fold.fold.test[i];
    if (windows_of(ctx.cohort, {subject}).size() < 5) {
      spdlog::warn("fine-tuning skips {}: fewer than 5 valid windows", subject);
      continue;
    }
    auto o = finetune_subject(model, ctx.cohort, subject, ctx.cfg, ctx.cfg.seed + i);
    spdlog::info("{}: SBP MAE {:.2f} -> {:.2f}, DBP MAE {:.2f} -> {:.2f}", subject, o.pre.sbp.mae, o.post.sbp.mae,
                 o.pre.dbp.mae, o.post.dbp.mae);
    pre_s.push_back(o.pre.sbp.mae);
    post_s.push_back(o.post.sbp.mae);
    pre_d.push_back(o.pre.dbp.mae);
    post_d.push_back(o.post.dbp.mae);
    subjects.push_back(to_json(o));
    out.push_back(std::move(o));
  }
  nlohmann::json doc = {{"model", ref}, {"mode", ctx.cfg.finetune.mode}, {"train_frac", ctx.cfg.finetune.train_frac},
                        {"subjects", subjects}};
  if (!out.empty())
    doc["median"] = {{"pre", {{"sbp", median(pre_s)}, {"dbp", median(pre_d)}}},
                     {"post", {{"sbp", median(post_s)}, {"dbp", median(post_d)}}}};
  std::string dir = ref;
  std::replace(dir.begin(), dir.end(), '/', '_');
  const auto path = ctx.root / "finetune" / dir / "results.json";
  std::filesystem::create_directories(path.parent_path());
  write_file(path, doc.dump(2));
  return out;
}

}  // namespace bpc
