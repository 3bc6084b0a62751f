// SPDX-License-Identifier: Apache-2.0
#include "pipeline/stages.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "core/serialize.hpp"
#include "eval/filter.hpp"
#include "mps/mps.hpp"
#include "nas/supernet.hpp"
#include "pit/pit.hpp"

namespace bpc {

namespace fs = std::filesystem;
using nlohmann::json;

StageContext::StageContext(const ExperimentConfig& c) : cfg(c) {
  cfg.validate();
  const auto records = load_records(cfg.data);
  cohort = build_cohort(records, cfg);
  fold = make_fold(cohort, cfg);
  root = fs::path(cfg.out_dir) / fmt::format("fold{}", cfg.fold);
  fs::create_directories(root);
  write_file(root / "split.json", fold.split.to_json().dump(2) + "\n");
  cfg.save(root / "experiment.json");
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<Estimate> predict_bp(ModelGraph& g, const std::vector<const Window*>& ws, const Cohort& c, double smooth_coeff) {
  if (ws.empty()) return {};
  const std::string task = g.meta.at("task").get<std::string>();
  const TargetNorm norm = TargetNorm::from_json(g.meta.at("norm"));
  const Dataset d = make_dataset(ws, c, task, norm);
  RunOptions opts;
  opts.training = false;
  const Tensor y = predict(g, d.x, opts);
  std::vector<Estimate> out;
  for (int i = 0; i < d.size(); ++i) {
    if (task == "value") {
      out.push_back({y.at(i, 0, 0) * norm.std[0] + norm.mean[0], y.at(i, 1, 0) * norm.std[1] + norm.mean[1]});
      continue;
    }
    std::vector<double> wave(static_cast<std::size_t>(y.dim(2)));
    for (int l = 0; l < y.dim(2); ++l) wave[static_cast<std::size_t>(l)] = y.at(i, 0, l) * norm.std[0] + norm.mean[0];
    if (auto e = labels_from_waveform(wave, c.model_fs(), smooth_coeff)) {
      out.push_back(*e);
    } else {
      // Too few beats in the reconstruction: fall back to its extremes.
      SmoothOptions so;
      so.coeff = smooth_coeff;
      const auto s = smooth_output(wave, c.model_fs(), so);
      const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
      out.push_back({*hi, *lo});
    }
  }
  return out;
}

MetricsReport evaluate_windows(ModelGraph& g, const std::vector<const Window*>& ws, const Cohort& c, double smooth_coeff) {
  const auto pred = predict_bp(g, ws, c, smooth_coeff);
  std::vector<Estimate> truth;
  std::vector<std::string> subj;
  for (const auto* w : ws) {
    truth.push_back({w->sbp, w->dbp});
    subj.push_back(w->subject);
  }
  return compute_mae(pred, truth, subj);
}

namespace {

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.n_windows = j.at("n_windows");
  r.n_subjects = j.at("n_subjects");
  auto st = [](const json& s) { return ErrorStats{s.at("mae"), s.at("me"), s.at("std")}; };
  r.sbp = st(j.at("sbp"));
  r.dbp = st(j.at("dbp"));
  return r;
}

std::string dir_name(const std::string& ref) {
  std::string s = ref;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t salt) {
  TrainConfig t;
  t.lr_w = cfg.train.lr_w;
  t.lr_theta = cfg.train.lr_theta;
  t.batch_size = cfg.train.batch_size;
  t.alternate = cfg.train.alternate;
  t.seed = cfg.seed * 0x9E3779B97F4A7C15ULL + salt;
  return t;
}

PhaseConfig weights_phase(const std::string& name, int epochs, int patience) {
  PhaseConfig p;
  p.name = name;
  p.epochs = epochs;
  p.patience = patience;
  p.update_w = true;
  p.update_theta = false;
  return p;
}

PhaseConfig search_phase(const ExperimentConfig& cfg, double lambda) {
  PhaseConfig p;
  p.name = "search";
  p.epochs = cfg.train.search_epochs;
  p.patience = cfg.train.patience;
  p.update_w = true;
  p.update_theta = true;
  p.lambda = lambda;
  // Selecting on the task loss alone would restore the early, unpruned
  // architecture whenever the cost term costs accuracy.
  p.select_on_total = true;
  return p;
}

void stamp(ModelGraph& g, const StageContext& ctx, const std::string& stage, double lambda) {
  g.meta["task"] = ctx.cfg.task();
  g.meta["norm"] = ctx.fold.norm.to_json();
  g.meta["fs"] = ctx.cohort.model_fs();
  g.meta["decimate"] = ctx.cohort.decimate;
  g.meta["input_length"] = ctx.cohort.input_length;
  g.meta["fold"] = ctx.cfg.fold;
  g.meta["train_subjects"] = ctx.fold.fold.train;
  g.meta["val_subjects"] = ctx.fold.fold.val;
  g.meta["stage"] = stage;
  g.meta["lambda"] = lambda;
}

// Settings that determine a candidate; used to skip finished work.
json plan_of(const StageContext& ctx, const std::string& stage, const std::string& input, double lambda) {
  json cfg = ctx.cfg.to_json();
  cfg.erase("out_dir");
  return {{"stage", stage}, {"input", input}, {"lambda", lambda}, {"experiment", cfg}};
}

bool finished(const fs::path& dir, const json& plan) {
  if (!fs::exists(dir / "metrics.json") || !fs::exists(dir / "config.json")) return false;
  try {
    return json::parse(read_file(dir / "config.json")) == plan;
  } catch (const std::exception&) {
    return false;
  }
}

Candidate load_candidate(const fs::path& root, const std::string& ref) {
  const json m = json::parse(read_file(root / ref / "metrics.json"));
  Candidate c;
  c.ref = ref;
  c.point = pareto_point_from_json(m.at("point"));
  c.val = report_from_json(m.at("val"));
  c.test = report_from_json(m.at("test"));
  return c;
}

double weight_bits(const ModelGraph& g) {
  bool quantized = false;
  for (int i = 0; i < g.size(); ++i)
    if (const auto* c = dynamic_cast<const Conv1d*>(g.node(i).layer.get()); c && c->wq) quantized = true;
  return quantized ? bit_cost(g, 1.0) : 32.0 * static_cast<double>(g.param_count());
}

Candidate finish_candidate(StageContext& ctx, ModelGraph& g, const std::string& ref, const std::string& stage,
                           double lambda, const json& plan, const TrainLog& log, bool quantized) {
  const fs::path dir = ctx.root / ref;
  fs::create_directories(dir);
  Candidate c;
  c.ref = ref;
  c.val = evaluate_windows(g, ctx.fold.val_w, ctx.cohort, ctx.cfg.smooth_coeff);
  c.test = evaluate_windows(g, ctx.fold.test_w, ctx.cohort, ctx.cfg.smooth_coeff);
  ParetoPoint& p = c.point;
  p.params = static_cast<double>(g.param_count());
  p.bits = weight_bits(g);
  p.cost = quantized ? p.bits : p.params;
  p.mae_sbp = c.test.sbp.mae;
  p.mae_dbp = c.test.dbp.mae;
  p.stage = stage;
  p.lambda = lambda;
  p.model_ref = ref;
  save_graph(g, dir / "model");
  if (quantized) export_quantized(g).save(dir / "quant");
  log.write_csv(dir / "log.csv");
  write_file(dir / "metrics.json",
             json{{"point", to_json(p)}, {"val", c.val.to_json()}, {"test", c.test.to_json()}}.dump(2) + "\n");
  // Written last: its presence marks the candidate as complete.
  write_file(dir / "config.json", plan.dump(2) + "\n");
  spdlog::info("{}: cost {:.6g} params {:.0f} test MAE {:.2f}/{:.2f} (val {:.2f}/{:.2f})", ref, p.cost, p.params,
               p.mae_sbp, p.mae_dbp, c.val.sbp.mae, c.val.dbp.mae);
  return c;
}

void write_stage_summary(StageContext& ctx, const std::string& stage, const std::vector<Candidate>& cands) {
  const fs::path dir = ctx.root / stage;
  fs::create_directories(dir);
  std::vector<ParetoPoint> pts;
  json list = json::array();
  for (const auto& c : cands) {
    pts.push_back(c.point);
    list.push_back(c.ref);
  }
  write_file(dir / "candidates.json", list.dump(2) + "\n");
  write_points_csv(pts, dir / "points.csv");
  if (pts.empty()) return;
  write_points_csv(pareto_front(pts, Objective::Sbp), dir / "front_sbp.csv");
  write_points_csv(pareto_front(pts, Objective::Dbp), dir / "front_dbp.csv");
  write_pareto_svg(pts, Objective::Sbp, dir / "front_sbp.svg");
  write_pareto_svg(pts, Objective::Dbp, dir / "front_dbp.svg");
}

std::string lambda_tag(std::size_t i) { return fmt::format("l{:02d}", i); }

// Trains `g` once with weight updates only and caches the result under `dir`.
ModelGraph cached_warmup(StageContext& ctx, ModelGraph g, const fs::path& dir, const json& plan, int epochs,
                         std::function<double(int)> tau, std::uint64_t salt) {
  if (fs::exists(dir / "config.json") && json::parse(read_file(dir / "config.json")) == plan)
    return load_graph(dir / "model");
  fs::create_directories(dir);
  TrainLog log;
  PhaseConfig p = weights_phase("warmup", epochs, ctx.cfg.train.patience);
  p.tau = std::move(tau);
  train_phase(g, ctx.fold.train, ctx.fold.val, p, train_config(ctx.cfg, salt), {}, log);
  save_graph(g, dir / "model");
  log.write_csv(dir / "log.csv");
  write_file(dir / "config.json", plan.dump(2) + "\n");
  return g;
}

Regularizer nas_reg() {
  return {[](const ModelGraph& g, double) { return expected_cost(g); },
          [](ModelGraph& g, double s, double) { expected_cost_backward(g, s); }};
}

Regularizer pit_reg() {
  return {[](const ModelGraph& g, double) { return mask_cost(g); },
          [](ModelGraph& g, double s, double) { mask_cost_backward(g, s); }};
}

Regularizer mps_reg() {
  return {[](const ModelGraph& g, double tau) { return bit_cost(g, tau); },
          [](ModelGraph& g, double s, double tau) { bit_cost_backward(g, s, tau); }};
}

std::uint64_t salt_of(const std::string& s) {
  // Deterministic across runs and platforms (unlike std::hash).
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace

ModelGraph load_model(const fs::path& root, const std::string& ref) {
  const fs::path stem = root / ref / "model";
  if (!fs::exists(stem.string() + ".json")) throw Error("missing model artifact " + stem.string() + ".json");
  return load_graph(stem);
}

std::vector<Candidate> load_candidates(const fs::path& root, const std::string& stage) {
  const fs::path list = root / stage / "candidates.json";
  if (stage == "seed") {
    if (!fs::exists(root / "seed" / "metrics.json"))
      throw MissingArtifactError("missing prerequisite artifact " + (root / "seed" / "metrics.json").string() + " (run the seed stage)");
    return {load_candidate(root, "seed")};
  }
  if (!fs::exists(list)) throw MissingArtifactError("missing prerequisite artifact " + list.string() + " (run the " + stage + " stage)");
  std::vector<Candidate> out;
  for (const auto& ref : json::parse(read_file(list))) {
    const std::string r = ref.get<std::string>();
    if (!fs::exists(root / r / "metrics.json")) throw MissingArtifactError("missing prerequisite artifact " + (root / r / "metrics.json").string());
    out.push_back(load_candidate(root, r));
  }
  return out;
}

Candidate train_seed(StageContext& ctx) {
  const json plan = plan_of(ctx, "seed", "", 0.0);
  if (finished(ctx.root / "seed", plan)) return load_candidate(ctx.root, "seed");
  SeedOptions so = ctx.cfg.seed_arch;
  so.input_length = ctx.cohort.input_length;
  ModelGraph g = build_seed(so);
  stamp(g, ctx, "seed", 0.0);
  TrainLog log;
  const auto& t = ctx.cfg.train;
  train_phase(g, ctx.fold.train, ctx.fold.val, weights_phase("train", t.warmup_epochs + t.search_epochs + t.finetune_epochs, t.patience),
              train_config(ctx.cfg, salt_of("seed")), {}, log);
  Candidate c = finish_candidate(ctx, g, "seed", "seed", 0.0, plan, log, false);
  write_stage_summary(ctx, "seed", {c});
  return c;
}

std::vector<std::string> select_inputs(const std::vector<Candidate>& pool, bool include_smallest) {
  if (pool.empty()) throw Error("no candidates to select stage inputs from");
  std::vector<std::string> out;
  auto add = [&](const std::string& r) {
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  };
  auto best = [&](auto key) {
    return std::min_element(pool.begin(), pool.end(), [&](const Candidate& a, const Candidate& b) { return key(a) < key(b); })->ref;
  };
  add(best([](const Candidate& c) { return c.val.sbp.mae; }));
  add(best([](const Candidate& c) { return c.val.dbp.mae; }));
  for (const auto& c : pool)
    if (c.ref == "seed") add("seed");
  if (include_smallest) {
    std::vector<ParetoPoint> pts;
    for (const auto& c : pool) {
      ParetoPoint p = c.point;
      p.cost = p.bits;
      p.mae_sbp = c.val.sbp.mae;
      p.mae_dbp = c.val.dbp.mae;
      pts.push_back(p);
    }
    const auto front = pareto_front(pts, Objective::Mean);
    add(front.front().model_ref);
  }
  return out;
}

std::vector<Candidate> run_nas(StageContext& ctx) {
  train_seed(ctx);
  const ModelGraph seed = load_model(ctx.root, "seed");
  const json wplan = plan_of(ctx, "nas-warmup", "seed", 0.0);
  ModelGraph sn = build_supernet(seed, ctx.cfg.seed_arch.seed);
  sn.meta = seed.meta;
  sn = cached_warmup(ctx, std::move(sn), ctx.root / "nas" / "warmup", wplan, ctx.cfg.train.warmup_epochs, {},
                     salt_of("nas-warmup"));
  std::vector<Candidate> out;
  for (std::size_t li = 0; li < ctx.cfg.nas_lambdas.size(); ++li) {
    const double lambda = ctx.cfg.nas_lambdas[li];
    const std::string ref = "nas/" + lambda_tag(li);
    const json plan = plan_of(ctx, "nas", "seed", lambda);
    if (finished(ctx.root / ref, plan)) {
      out.push_back(load_candidate(ctx.root, ref));
      continue;
    }
    ModelGraph g = sn;
    TrainLog log;
    const auto tc = train_config(ctx.cfg, salt_of(ref));
    train_phase(g, ctx.fold.train, ctx.fold.val, search_phase(ctx.cfg, lambda), tc, nas_reg(), log);
    ModelGraph arch = extract_architecture(g);
    stamp(arch, ctx, "nas", lambda);
    train_phase(arch, ctx.fold.train, ctx.fold.val, weights_phase("finetune", ctx.cfg.train.finetune_epochs, ctx.cfg.train.patience),
                tc, {}, log);
    out.push_back(finish_candidate(ctx, arch, ref, "nas", lambda, plan, log, false));
  }
  write_stage_summary(ctx, "nas", out);
  return out;
}

std::vector<Candidate> run_pit(StageContext& ctx, const std::vector<std::string>& inputs) {
  std::vector<Candidate> out;
  for (const auto& in : inputs) {
    ModelGraph base = load_model(ctx.root, in);
    attach_masks(base);
    const std::string tag = dir_name(in);
    base = cached_warmup(ctx, std::move(base), ctx.root / "pit" / tag / "warmup", plan_of(ctx, "pit-warmup", in, 0.0),
                         ctx.cfg.train.warmup_epochs, {}, salt_of("pit-warmup/" + in));
    for (std::size_t li = 0; li < ctx.cfg.pit_lambdas.size(); ++li) {
      const double lambda = ctx.cfg.pit_lambdas[li];
      const std::string ref = "pit/" + tag + "/" + lambda_tag(li);
      const json plan = plan_of(ctx, "pit", in, lambda);
      if (finished(ctx.root / ref, plan)) {
        out.push_back(load_candidate(ctx.root, ref));
        continue;
      }
      ModelGraph g = base;
      TrainLog log;
      const auto tc = train_config(ctx.cfg, salt_of(ref));
      train_phase(g, ctx.fold.train, ctx.fold.val, search_phase(ctx.cfg, lambda), tc, pit_reg(), log);
      clamp_masks(g);
      ModelGraph pruned = export_pruned(g);
      stamp(pruned, ctx, "pit", lambda);
      pruned.meta["input_model"] = in;
      train_phase(pruned, ctx.fold.train, ctx.fold.val,
                  weights_phase("finetune", ctx.cfg.train.finetune_epochs, ctx.cfg.train.patience), tc, {}, log);
      out.push_back(finish_candidate(ctx, pruned, ref, "pit", lambda, plan, log, false));
    }
  }
  write_stage_summary(ctx, "pit", out);
  return out;
}

std::vector<Candidate> run_mps(StageContext& ctx, const std::vector<std::string>& inputs) {
  std::vector<Candidate> out;
  for (const auto& in : inputs) {
    ModelGraph base = prepare_for_quant(load_model(ctx.root, in));
    attach_bit_search(base, ctx.cfg.mps_bits);
    const std::string tag = dir_name(in);
    base = cached_warmup(ctx, std::move(base), ctx.root / "mps" / tag / "warmup", plan_of(ctx, "mps-warmup", in, 0.0),
                         ctx.cfg.train.warmup_epochs, [](int) { return tau_schedule(0); }, salt_of("mps-warmup/" + in));
    for (std::size_t li = 0; li < ctx.cfg.mps_lambdas.size(); ++li) {
      const double lambda = ctx.cfg.mps_lambdas[li];
      const std::string ref = "mps/" + tag + "/" + lambda_tag(li);
      const json plan = plan_of(ctx, "mps", in, lambda);
      if (finished(ctx.root / ref, plan)) {
        out.push_back(load_candidate(ctx.root, ref));
        continue;
      }
      ModelGraph g = base;
      TrainLog log;
      const auto tc = train_config(ctx.cfg, salt_of(ref));
      PhaseConfig search = search_phase(ctx.cfg, lambda);
      search.tau = tau_schedule;
      train_phase(g, ctx.fold.train, ctx.fold.val, search, tc, mps_reg(), log);
      freeze_precision(g);
      stamp(g, ctx, "mps", lambda);
      g.meta["input_model"] = in;
      train_phase(g, ctx.fold.train, ctx.fold.val, weights_phase("finetune", ctx.cfg.train.finetune_epochs, ctx.cfg.train.patience),
                  tc, {}, log);
      out.push_back(finish_candidate(ctx, g, ref, "mps", lambda, plan, log, true));
    }
  }
  write_stage_summary(ctx, "mps", out);
  return out;
}

std::vector<Candidate> run_stage(StageContext& ctx, const std::string& stage) {
  std::vector<Candidate> out;
  if (stage == "seed") {
    out = {train_seed(ctx)};
  } else if (stage == "nas") {
    out = run_nas(ctx);
  } else if (stage == "pit") {
    auto pool = load_candidates(ctx.root, "seed");
    for (auto& c : load_candidates(ctx.root, "nas")) pool.push_back(std::move(c));
    out = run_pit(ctx, select_inputs(pool, ctx.cfg.select_smallest));
  } else if (stage == "mps") {
    auto pool = load_candidates(ctx.root, "seed");
    for (const char* s : {"nas", "pit"})
      for (auto& c : load_candidates(ctx.root, s)) pool.push_back(std::move(c));
    out = run_mps(ctx, select_inputs(pool, ctx.cfg.select_smallest));
  } else {
    throw Error("unknown stage '" + stage + "' (expected seed, nas, pit or mps)");
  }
  // Combined front over every stage run so far, in weight bits.
  std::vector<ParetoPoint> all;
  for (const char* s : {"seed", "nas", "pit", "mps"}) {
    const bool present = std::string(s) == "seed" ? fs::exists(ctx.root / "seed" / "metrics.json")
                                                  : fs::exists(ctx.root / s / "candidates.json");
    if (!present) continue;
    for (const auto& c : load_candidates(ctx.root, s)) all.push_back(c.point);
  }
  const auto bits = with_cost_axis(all, CostAxis::Bits);
  write_points_csv(pareto_front(bits, Objective::Sbp), ctx.root / "combined_front_sbp.csv");
  write_points_csv(pareto_front(bits, Objective::Dbp), ctx.root / "combined_front_dbp.csv");
  write_pareto_svg(bits, Objective::Sbp, ctx.root / "combined_front_sbp.svg");
  return out;
}

ParetoPoint recompute_cost(const fs::path& root, const Candidate& c) {
  const ModelGraph g = load_model(root, c.ref);
  ParetoPoint p = c.point;
  p.params = static_cast<double>(g.param_count());
  p.bits = weight_bits(g);
  p.cost = c.point.stage == "mps" ? p.bits : p.params;
  return p;
}

}  // namespace bpc
