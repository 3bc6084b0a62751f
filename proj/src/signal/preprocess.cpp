// SPDX-License-Identifier: Apache-2.0
#include "signal/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_interp.h>

#include "core/tensor.hpp"
#include "signal/peaks.hpp"

namespace bpc {

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return -2.0;  // a flat overlap never wins
  return sab / std::sqrt(saa * sbb);
}

bool flat(std::span<const double> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *hi - *lo <= 0.0;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

int window_length(double fs, const WindowRules& rules) {
  return static_cast<int>(std::lround(rules.window_s * fs));
}

}  // namespace

int align_xcorr(std::span<const double> ppg, std::span<const double> abp, double fs, double max_lag_s) {
  if (ppg.size() != abp.size()) throw Error("align_xcorr: ppg and abp lengths differ");
  if (!(fs > 0.0)) throw Error("align_xcorr: sampling rate must be positive");
  if (static_cast<double>(ppg.size()) < 2.0 * fs) throw Error("align_xcorr: record shorter than two seconds");
  if (flat(ppg) || flat(abp)) throw Error("align_xcorr: flat signal has no defined correlation");
  const int n = static_cast<int>(ppg.size());
  // Keep at least one second of overlap at the extreme lags.
  const int max_lag = std::min(static_cast<int>(std::lround(max_lag_s * fs)), n - static_cast<int>(fs));
  int best = 0;
  double best_r = -3.0;
  for (int s = -max_lag; s <= max_lag; ++s) {
    const int len = n - std::abs(s);
    const auto a = s >= 0 ? ppg.subspan(0, static_cast<std::size_t>(len)) : ppg.subspan(static_cast<std::size_t>(-s));
    const auto b = s >= 0 ? abp.subspan(static_cast<std::size_t>(s)) : abp.subspan(0, static_cast<std::size_t>(len));
    const double r = pearson(a, b);
    if (r > best_r || (r == best_r && std::abs(s) < std::abs(best))) {
      best_r = r;
      best = s;
    }
  }
  return best;
}

void apply_alignment(SubjectRecord& rec, int lag) {
  if (rec.abp.size() != rec.ppg.size()) throw Error("apply_alignment: ppg and abp lengths differ");
  const auto a = static_cast<std::size_t>(std::abs(lag));
  if (a >= rec.ppg.size()) throw Error("apply_alignment: lag exceeds record length");
  const auto len = static_cast<std::ptrdiff_t>(rec.ppg.size() - a);
  if (lag >= 0) {
    rec.ppg.resize(static_cast<std::size_t>(len));
    rec.abp.erase(rec.abp.begin(), rec.abp.begin() + static_cast<std::ptrdiff_t>(a));
  } else {
    rec.ppg.erase(rec.ppg.begin(), rec.ppg.begin() + static_cast<std::ptrdiff_t>(a));
    rec.abp.resize(static_cast<std::size_t>(len));
  }
}

Labels extract_labels(std::span<const double> abp, double fs, const WindowRules& rules) {
  Labels out;
  const auto peaks = detect_beats(abp, fs, rules.max_detect_bpm, rules.rel_prominence);
  out.beats = static_cast<int>(peaks.size());
  if (out.beats < rules.min_beats) return out;
  std::vector<double> sys, dia;
  for (int p : peaks) sys.push_back(abp[static_cast<std::size_t>(p)]);
  for (int v : valleys_between(abp, peaks)) dia.push_back(abp[static_cast<std::size_t>(v)]);
  out.sbp = median(sys);
  out.dbp = median(dia);
  return out;
}

std::vector<double> baseline_correct(std::span<const double> ppg, double fs, const WindowRules& rules) {
  std::vector<double> out(ppg.begin(), ppg.end());
  if (out.empty()) return out;
  const auto peaks = detect_beats(ppg, fs, rules.max_detect_bpm, rules.rel_prominence);
  const auto valleys = valleys_between(ppg, peaks);
  if (valleys.empty()) {
    const double lo = *std::min_element(out.begin(), out.end());
    for (double& v : out) v -= lo;
    return out;
  }
  std::vector<double> xs, ys;
  for (int v : valleys) {
    xs.push_back(v);
    ys.push_back(ppg[static_cast<std::size_t>(v)]);
  }
  if (xs.size() == 1) {
    for (double& v : out) v -= ys.front();
    return out;
  }
  const gsl_interp_type* type = xs.size() >= 3 ? gsl_interp_cspline : gsl_interp_linear;
  std::unique_ptr<gsl_interp, decltype(&gsl_interp_free)> interp(gsl_interp_alloc(type, xs.size()), gsl_interp_free);
  std::unique_ptr<gsl_interp_accel, decltype(&gsl_interp_accel_free)> acc(gsl_interp_accel_alloc(),
                                                                          gsl_interp_accel_free);
  if (!interp || !acc || gsl_interp_init(interp.get(), xs.data(), ys.data(), xs.size()) != GSL_SUCCESS)
    throw Error("baseline_correct: spline setup failed");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = std::clamp(static_cast<double>(i), xs.front(), xs.back());
    out[i] -= gsl_interp_eval(interp.get(), xs.data(), ys.data(), t, acc.get());
  }
  // Knots are interpolated exactly up to rounding; pin them to zero.
  for (int v : valleys) out[static_cast<std::size_t>(v)] = 0.0;
  return out;
}

void screen_window(Window& w, double fs, const WindowRules& rules) {
  w.valid = false;
  w.sbp = w.dbp = w.hr = 0.0;
  auto reject = [&](const char* why) { w.reason = why; };

  if (!w.abp.empty()) {
    const auto [lo, hi] = std::minmax_element(w.abp.begin(), w.abp.end());
    if (*lo < rules.abp_min || *hi > rules.abp_max) return reject("amplitude");
    const auto peaks = detect_beats(w.abp, fs, rules.max_detect_bpm, rules.rel_prominence);
    if (peaks.size() < 2) return reject("beats");
    w.hr = heart_rate_bpm(peaks, fs);
    if (w.hr < rules.hr_min || w.hr > rules.hr_max) return reject("hr");
    const Labels lab = extract_labels(w.abp, fs, rules);
    if (lab.beats < rules.min_beats) return reject("beats");
    w.sbp = lab.sbp;
    w.dbp = lab.dbp;
  } else {
    throw Error("screen_window: window has no pressure waveform");
  }
  if (w.sbp - w.dbp <= rules.min_pulse_pressure) return reject("pulse pressure");

  // PPG quality: spread of beat amplitudes and valley depths.
  const auto pk = detect_beats(w.ppg, fs, rules.max_detect_bpm, rules.rel_prominence);
  if (pk.size() < 2) return reject("ppg");
  const auto [plo, phi] = std::minmax_element(w.ppg.begin(), w.ppg.end());
  std::vector<double> heights, depths;
  for (int p : pk) heights.push_back(w.ppg[static_cast<std::size_t>(p)] - *plo);
  for (int v : valleys_between(w.ppg, pk)) depths.push_back(*phi - w.ppg[static_cast<std::size_t>(v)]);
  if (pop_std(heights) > rules.ppg_rel_std * mean(heights)) return reject("ppg");
  if (pop_std(depths) > rules.ppg_rel_std * mean(depths)) return reject("ppg");

  w.valid = true;
  w.reason.clear();
}

std::vector<Window> segment_and_filter(const SubjectRecord& rec, const WindowRules& rules) {
  if (!(rec.fs > 0.0)) throw Error("segment_and_filter: sampling rate must be positive");
  if (!rec.abp.empty() && rec.abp.size() != rec.ppg.size())
    throw Error("segment_and_filter: ppg and abp lengths differ for " + rec.id);
  if (rec.abp.empty() && !rec.bp) throw Error("segment_and_filter: record " + rec.id + " has no pressure reference");
  const int len = window_length(rec.fs, rules);
  const int count = static_cast<int>(rec.ppg.size()) / len;
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int k = 0; k < count; ++k) {
    Window w;
    w.subject = rec.id;
    w.index = k;
    const auto b = static_cast<std::ptrdiff_t>(k) * len;
    w.ppg.assign(rec.ppg.begin() + b, rec.ppg.begin() + b + len);
    if (!rec.abp.empty()) {
      w.abp.assign(rec.abp.begin() + b, rec.abp.begin() + b + len);
      screen_window(w, rec.fs, rules);
    } else {
      w.sbp = rec.bp->first;
      w.dbp = rec.bp->second;
      w.valid = w.sbp - w.dbp > rules.min_pulse_pressure;
      if (!w.valid) w.reason = "pulse pressure";
    }
    w.ppg = baseline_correct(w.ppg, rec.fs, rules);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Window> preprocess_record(SubjectRecord rec, const WindowRules& rules) {
  if (!rec.abp.empty()) apply_alignment(rec, align_xcorr(rec.ppg, rec.abp, rec.fs, rules.max_lag_s));
  return segment_and_filter(rec, rules);
}

}  // namespace bpc
