// SPDX-License-Identifier: Apache-2.0
#include "signal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "core/tensor.hpp"

namespace bpc {

namespace {

double gauss(double x, double c, double w) { return std::exp(-0.5 * (x - c) * (x - c) / (w * w)); }

}  // namespace

double PulseShape::raw(double phase) const {
  return gauss(phase, sys_center, sys_width) + dic_amp * gauss(phase, dic_center, dic_width);
}

double PulseShape::peak() const {
  double m = 0.0;
  for (int i = 0; i <= 2000; ++i) m = std::max(m, raw(i / 2000.0));
  return m;
}

std::vector<double> abp_waveform(double sbp, double dbp, double hr, double fs, double seconds, const PulseShape& shape) {
  if (!(hr > 0.0) || !(fs > 0.0)) throw Error("abp_waveform: rate and sampling frequency must be positive");
  const auto n = static_cast<std::size_t>(std::llround(fs * seconds));
  const auto period = static_cast<std::size_t>(std::max<long long>(2, std::llround(fs * 60.0 / hr)));
  // One sampled beat rescaled so its samples span exactly [dbp, sbp].
  std::vector<double> beat(period);
  for (std::size_t i = 0; i < period; ++i) beat[i] = shape.raw(static_cast<double>(i) / static_cast<double>(period));
  const auto [lo, hi] = std::minmax_element(beat.begin(), beat.end());
  const double blo = *lo, span = *hi - *lo;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = dbp + (sbp - dbp) * (beat[i % period] - blo) / span;
  return out;
}

SynthCohort synth_generate(int n_subjects, std::uint64_t seed, const SynthOptions& opts) {
  if (n_subjects < 1) throw Error("synth_generate needs at least one subject");
  if (!(opts.fs > 0.0) || !(opts.seconds > 0.0)) throw Error("sampling rate and duration must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  SynthCohort cohort;
  const auto n = static_cast<std::size_t>(std::llround(opts.fs * opts.seconds));
  constexpr double two_pi = 2.0 * std::numbers::pi;

  for (int s = 0; s < n_subjects; ++s) {
    SynthTruth tr;
    tr.sbp = 90.0 + 90.0 * u01(rng);
    tr.dbp = 50.0 + (std::min(110.0, tr.sbp - 20.0) - 50.0) * u01(rng);
    tr.hr = 40.0 + 90.0 * u01(rng);
    tr.lag_s = 0.1 + 0.2 * u01(rng);
    tr.offset = opts.offset_std * n01(rng);

    // Morphology follows pressure: stiffer (higher SBP) arteries give narrower
    // systolic peaks; higher DBP damps the dicrotic wave.
    PulseShape shape;
    shape.sys_width = 0.07 + 0.03 * (180.0 - tr.sbp) / 90.0;
    shape.dic_amp = 0.2 + 0.15 * (110.0 - tr.dbp) / 60.0;
    const double pk = shape.peak();
    const double ph_sbp = two_pi * u01(rng), ph_dbp = two_pi * u01(rng), ph_hr = two_pi * u01(rng);
    const double ph_resp = two_pi * u01(rng);

    // Pressure without the subject offset; the PPG sees this one.
    std::vector<double> abp(n);
    double beat_start = 0.0;
    double period = 60.0 / tr.hr, sbp_b = tr.sbp, dbp_b = tr.dbp;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / opts.fs;
      if (t >= beat_start + period) {
        beat_start += period;
        period = 60.0 / (tr.hr * (1.0 + 0.03 * std::sin(two_pi * beat_start / 20.0 + ph_hr)));
        sbp_b = tr.sbp + opts.drift * std::sin(two_pi * beat_start / 30.0 + ph_sbp);
        dbp_b = tr.dbp + opts.drift * std::sin(two_pi * beat_start / 25.0 + ph_dbp);
      }
      const double phase = (t - beat_start) / period;
      abp[i] = dbp_b + (sbp_b - dbp_b) * shape.raw(phase) / pk;
    }

    // PPG: compliance nonlinearity, pulse-transit lag, light smoothing,
    // amplitude normalization, respiration wander and sensor noise.
    const auto lag = static_cast<std::ptrdiff_t>(std::llround(tr.lag_s * opts.fs));
    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - lag);
      raw[i] = std::tanh((abp[static_cast<std::size_t>(src)] - 60.0) / 60.0);
    }
    const int half = std::max(1, static_cast<int>(std::lround(0.02 * opts.fs)));
    std::vector<double> ppg(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      int cnt = 0;
      for (int k = -half; k <= half; ++k) {
        const auto j = static_cast<std::ptrdiff_t>(i) + k;
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
        s += raw[static_cast<std::size_t>(j)];
        ++cnt;
      }
      ppg[i] = s / cnt;
    }
    const auto [lo, hi] = std::minmax_element(ppg.begin(), ppg.end());
    const double plo = *lo, span = std::max(*hi - *lo, 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / opts.fs;
      ppg[i] = (ppg[i] - plo) / span + 0.05 * std::sin(two_pi * 0.25 * t + ph_resp) + opts.ppg_noise * n01(rng);
    }
    for (double& v : abp) v += tr.offset + opts.abp_noise * n01(rng);

    SubjectRecord rec;
    rec.id = fmt::format("S{:03d}", s);
    rec.fs = opts.fs;
    rec.ppg = std::move(ppg);
    rec.abp = std::move(abp);
    cohort.records.push_back(std::move(rec));
    cohort.truth.push_back(tr);
  }
  return cohort;
}

}  // namespace bpc
