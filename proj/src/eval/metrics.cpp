// SPDX-License-Identifier: Apache-2.0
#include "eval/metrics.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "core/tensor.hpp"
#include "eval/filter.hpp"
#include "signal/preprocess.hpp"

namespace bpc {

ErrorStats error_stats(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw Error("error_stats: prediction and truth lengths differ");
  if (pred.empty()) throw Error("error_stats: no pairs to evaluate");
  const auto n = static_cast<double>(pred.size());
  ErrorStats s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    s.mae += std::abs(e);
    s.me += e;
  }
  s.mae /= n;
  s.me /= n;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i] - s.me;
    s.std += d * d;
  }
  s.std = std::sqrt(s.std / n);
  return s;
}

namespace {

MetricsReport pooled(std::span<const Estimate> pred, std::span<const Estimate> truth) {
  std::vector<double> ps, ts, pd, td;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ps.push_back(pred[i].sbp);
    ts.push_back(truth[i].sbp);
    pd.push_back(pred[i].dbp);
    td.push_back(truth[i].dbp);
  }
  MetricsReport r;
  r.n_windows = static_cast<int>(pred.size());
  r.sbp = error_stats(ps, ts);
  r.dbp = error_stats(pd, td);
  return r;
}

nlohmann::json stats_json(const ErrorStats& s) { return {{"mae", s.mae}, {"me", s.me}, {"std", s.std}}; }

}  // namespace

MetricsReport compute_mae(std::span<const Estimate> pred, std::span<const Estimate> truth,
                          std::span<const std::string> subjects) {
  if (pred.size() != truth.size()) throw Error("compute_mae: prediction and truth lengths differ");
  if (pred.empty()) throw Error("compute_mae: no pairs to evaluate");
  if (!subjects.empty() && subjects.size() != pred.size()) throw Error("compute_mae: one subject tag per pair is required");
  MetricsReport r = pooled(pred, truth);
  if (subjects.empty()) {
    r.n_subjects = 0;
    return r;
  }
  std::map<std::string, std::pair<std::vector<Estimate>, std::vector<Estimate>>> groups;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& g = groups[subjects[i]];
    g.first.push_back(pred[i]);
    g.second.push_back(truth[i]);
  }
  for (const auto& [id, g] : groups) {
    MetricsReport s = pooled(g.first, g.second);
    s.n_subjects = 1;
    r.per_subject.emplace(id, std::move(s));
  }
  r.n_subjects = static_cast<int>(groups.size());
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"n_windows", n_windows}, {"n_subjects", n_subjects}, {"sbp", stats_json(sbp)}, {"dbp", stats_json(dbp)}};
  if (!per_subject.empty()) {
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& [id, r] : per_subject) ps[id] = r.to_json();
    j["per_subject"] = std::move(ps);
  }
  return j;
}

AamiResult aami_check(double me, double std, int n_subjects) {
  AamiResult r;
  r.pass = std::abs(me) <= 5.0 && std <= 8.0;
  if (n_subjects < kAamiMinSubjects)
    r.note = fmt::format("cohort of {} subjects is below the {}-subject minimum of the AAMI protocol", n_subjects,
                         kAamiMinSubjects);
  return r;
}

AamiResult aami_check(const MetricsReport& r) {
  const auto s = aami_check(r.sbp.me, r.sbp.std, r.n_subjects);
  const auto d = aami_check(r.dbp.me, r.dbp.std, r.n_subjects);
  return {s.pass && d.pass, s.note};
}

std::optional<Estimate> labels_from_waveform(std::span<const double> wave, double fs, double smooth_coeff) {
  SmoothOptions o;
  o.coeff = smooth_coeff;
  const auto smoothed = smooth_output(wave, fs, o);
  const Labels l = extract_labels(smoothed, fs);
  if (l.beats < WindowRules{}.min_beats) return std::nullopt;
  return Estimate{l.sbp, l.dbp};
}

}  // namespace bpc
