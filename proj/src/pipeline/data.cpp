// SPDX-License-Identifier: Apache-2.0
#include "pipeline/data.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "signal/preprocess.hpp"
#include "signal/record_io.hpp"
#include "signal/synth.hpp"

namespace bpc {

nlohmann::json TargetNorm::to_json() const { return {{"mean", mean}, {"std", std}}; }

TargetNorm TargetNorm::from_json(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

std::vector<SubjectRecord> load_records(const DataConfig& d) {
  if (d.source == "csv") return load_record_dir(d.csv_dir);
  SynthOptions o;
  o.seconds = d.seconds;
  o.offset_std = d.offset_std;
  return synth_generate(d.n_subjects, d.seed, o).records;
}

namespace {

std::vector<double> block_average(std::span<const double> x, int factor, int length) {
  std::vector<double> out(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    double s = 0.0;
    for (int k = 0; k < factor; ++k) s += x[static_cast<std::size_t>(i * factor + k)];
    out[static_cast<std::size_t>(i)] = s / factor;
  }
  return out;
}

}  // namespace

Cohort build_cohort(const std::vector<SubjectRecord>& records, const ExperimentConfig& cfg) {
  if (records.empty()) throw Error("no subject records to preprocess");
  Cohort c;
  c.fs = records.front().fs;
  c.decimate = cfg.data.decimate;
  const std::string task = cfg.task();
  for (const auto& r : records) {
    if (std::abs(r.fs - c.fs) > 1e-6) throw Error("records use different sampling rates; resample them first");
    if (r.abp.empty() && task == "signal")
      throw Error("record " + r.id + " has no pressure waveform; unet1d can only be trained on waveform data");
    int kept = 0;
    for (auto& w : preprocess_record(r)) {
      if (!w.valid) continue;
      c.windows.push_back(std::move(w));
      ++kept;
    }
    if (kept > 0) c.subjects.push_back(r.id);
    spdlog::debug("subject {}: {} valid windows", r.id, kept);
  }
  if (c.windows.empty()) throw Error("no valid windows after preprocessing");
  int len = static_cast<int>(c.windows.front().ppg.size()) / c.decimate;
  if (task == "signal") {
    const int div = 1 << (cfg.seed_arch.stages - 1);
    len -= len % div;
  }
  if (len < 8) throw Error("window too short for the model after decimation");
  c.input_length = len;
  return c;
}

std::vector<double> window_input(const Window& w, const Cohort& c) {
  auto x = block_average(w.ppg, c.decimate, c.input_length);
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  s = std::sqrt(s / static_cast<double>(x.size()));
  for (double& v : x) v = (v - m) / (s > 1e-12 ? s : 1.0);
  return x;
}

std::vector<double> window_pressure(const Window& w, const Cohort& c) {
  if (w.abp.empty()) throw Error("window of " + w.subject + " has no pressure waveform");
  return block_average(w.abp, c.decimate, c.input_length);
}

TargetNorm fit_target_norm(const std::vector<const Window*>& ws, const Cohort& c, const std::string& task) {
  if (ws.empty()) throw Error("cannot fit target normalization on no windows");
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    s = std::sqrt(s / static_cast<double>(v.size()));
    return std::pair{m, s > 1e-9 ? s : 1.0};
  };
  TargetNorm n;
  if (task == "value") {
    std::vector<double> sbp, dbp;
    for (const auto* w : ws) {
      sbp.push_back(w->sbp);
      dbp.push_back(w->dbp);
    }
    for (const auto& v : {sbp, dbp}) {
      const auto [m, s] = stats(v);
      n.mean.push_back(m);
      n.std.push_back(s);
    }
  } else {
    std::vector<double> all;
    for (const auto* w : ws) {
      const auto p = window_pressure(*w, c);
      all.insert(all.end(), p.begin(), p.end());
    }
    const auto [m, s] = stats(all);
    n.mean = {m};
    n.std = {s};
  }
  return n;
}

Dataset make_dataset(const std::vector<const Window*>& ws, const Cohort& c, const std::string& task, const TargetNorm& norm) {
  const int n = static_cast<int>(ws.size()), len = c.input_length;
  Dataset d;
  d.x = Tensor({n, 1, len});
  d.y = task == "value" ? Tensor({n, 2, 1}) : Tensor({n, 1, len});
  for (int i = 0; i < n; ++i) {
    const Window& w = *ws[static_cast<std::size_t>(i)];
    const auto x = window_input(w, c);
    for (int l = 0; l < len; ++l) d.x.at(i, 0, l) = x[static_cast<std::size_t>(l)];
    if (task == "value") {
      d.y.at(i, 0, 0) = (w.sbp - norm.mean[0]) / norm.std[0];
      d.y.at(i, 1, 0) = (w.dbp - norm.mean[1]) / norm.std[1];
    } else {
      const auto p = window_pressure(w, c);
      for (int l = 0; l < len; ++l) d.y.at(i, 0, l) = (p[static_cast<std::size_t>(l)] - norm.mean[0]) / norm.std[0];
    }
    d.subject.push_back(w.subject);
  }
  return d;
}

std::vector<const Window*> windows_of(const Cohort& c, const std::vector<std::string>& subjects) {
  std::vector<const Window*> out;
  for (const auto& w : c.windows)
    if (std::find(subjects.begin(), subjects.end(), w.subject) != subjects.end()) out.push_back(&w);
  return out;
}

FoldData make_fold(const Cohort& c, const ExperimentConfig& cfg) {
  FoldData f;
  f.split = subject_kfold(c.subjects, cfg.folds, cfg.seed);
  f.fold = f.split.folds.at(static_cast<std::size_t>(cfg.fold));
  f.train_w = windows_of(c, f.fold.train);
  f.val_w = windows_of(c, f.fold.val);
  f.test_w = windows_of(c, f.fold.test);
  if (f.train_w.empty() || f.val_w.empty() || f.test_w.empty()) throw Error("a fold split has no windows");
  const std::string task = cfg.task();
  f.norm = fit_target_norm(f.train_w, c, task);
  f.train = make_dataset(f.train_w, c, task, f.norm);
  f.val = make_dataset(f.val_w, c, task, f.norm);
  f.test = make_dataset(f.test_w, c, task, f.norm);
  return f;
}

}  // namespace bpc
