// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "core/tensor.hpp"
#include "signal/peaks.hpp"
#include "signal/preprocess.hpp"
#include "signal/record_io.hpp"
#include "signal/splits.hpp"
#include "signal/synth.hpp"

namespace bpc {
namespace {

constexpr double kFs = 125.0;

// A clean window: pressure pulses with the given parameters and a PPG that
// follows the pressure linearly.
Window make_window(double sbp, double dbp, double hr) {
  Window w;
  w.subject = "T";
  w.abp = abp_waveform(sbp, dbp, hr, kFs, 5.0);
  for (double v : w.abp) w.ppg.push_back((v - dbp) / std::max(sbp - dbp, 1.0));
  return w;
}

TEST(Peaks, MedianHandlesEvenAndOdd) {
  EXPECT_DOUBLE_EQ(median({118, 122, 120}), 120.0);
  EXPECT_DOUBLE_EQ(median({1, 4, 2, 3}), 2.5);
  EXPECT_THROW(median({}), Error);
}

TEST(Peaks, ProminenceAndDistance) {
  // Two tall peaks and a small ripple between them.
  std::vector<double> x = {0, 5, 0, 0.3, 0.2, 0, 6, 0};
  PeakOptions o;
  o.min_prominence = 1.0;
  EXPECT_EQ(find_peaks(x, o), (std::vector<int>{1, 6}));
  o.min_prominence = 0.0;
  o.min_distance = 6;
  EXPECT_EQ(find_peaks(x, o), (std::vector<int>{6}));  // the taller one survives
}

TEST(Peaks, PlateauMiddle) {
  std::vector<double> x = {0, 1, 3, 3, 3, 1, 0};
  EXPECT_EQ(find_peaks(x, {}), (std::vector<int>{3}));
}

TEST(Synth, DeterministicUnderSeed) {
  const auto a = synth_generate(3, 11), b = synth_generate(3, 11), c = synth_generate(3, 12);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(a.records[s].ppg, b.records[s].ppg);
    EXPECT_EQ(a.records[s].abp, b.records[s].abp);
  }
  EXPECT_NE(a.records[0].abp, c.records[0].abp);
}

TEST(Synth, DrawnRangesAndLengths) {
  const auto c = synth_generate(50, 3);
  for (std::size_t s = 0; s < c.truth.size(); ++s) {
    const auto& t = c.truth[s];
    EXPECT_GE(t.sbp, 90.0);
    EXPECT_LE(t.sbp, 180.0);
    EXPECT_GE(t.dbp, 50.0);
    EXPECT_LE(t.dbp, 110.0);
    EXPECT_GE(t.sbp - t.dbp, 20.0);
    EXPECT_GE(t.hr, 40.0);
    EXPECT_LE(t.hr, 130.0);
    EXPECT_EQ(c.records[s].ppg.size(), 7500u);
    EXPECT_EQ(c.records[s].abp.size(), 7500u);
  }
}

TEST(Synth, BeatMaximaTrackDrawnSbp) {
  const auto c = synth_generate(20, 5);
  for (std::size_t s = 0; s < c.truth.size(); ++s) {
    const auto& abp = c.records[s].abp;
    const auto peaks = detect_beats(abp, kFs);
    ASSERT_GE(peaks.size(), 30u);
    for (int p : peaks) EXPECT_NEAR(abp[static_cast<std::size_t>(p)], c.truth[s].sbp, 2.0) << "subject " << s;
  }
}

TEST(Synth, PeakCountRecoversHeartRate) {
  const auto c = synth_generate(20, 8);
  for (std::size_t s = 0; s < c.truth.size(); ++s) {
    const auto peaks = detect_beats(c.records[s].abp, kFs);
    ASSERT_GE(peaks.size(), 3u);
    // Beats per elapsed time between the first and last detected peak.
    const double hr = 60.0 * static_cast<double>(peaks.size() - 1) * kFs / (peaks.back() - peaks.front());
    EXPECT_NEAR(hr, c.truth[s].hr, 2.0) << "subject " << s;
  }
}

TEST(Align, ZeroAndConstructedShift) {
  const auto c = synth_generate(1, 21);
  const auto& ppg = c.records[0].ppg;
  EXPECT_EQ(align_xcorr(ppg, ppg, kFs), 0);
  for (int shift : {25, -40, 1}) {
    std::vector<double> abp(ppg.size());
    for (std::size_t i = 0; i < ppg.size(); ++i) {
      const auto j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) - shift, 0,
                                                static_cast<std::ptrdiff_t>(ppg.size()) - 1);
      abp[i] = ppg[static_cast<std::size_t>(j)];
    }
    EXPECT_EQ(align_xcorr(ppg, abp, kFs), shift);
  }
}

TEST(Align, AntiCorrelatedIsNotAligned) {
  const auto c = synth_generate(1, 4);
  const auto& ppg = c.records[0].ppg;
  std::vector<double> neg(ppg.size());
  for (std::size_t i = 0; i < ppg.size(); ++i) neg[i] = -ppg[i];
  // The signed maximum lands away from lag 0, where correlation is -1.
  EXPECT_NE(align_xcorr(ppg, neg, kFs), 0);
}

TEST(Align, FlatAndShortSignalsError) {
  std::vector<double> flat(500, 1.0), ramp(500);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = std::sin(0.1 * static_cast<double>(i));
  EXPECT_THROW(align_xcorr(flat, ramp, kFs), Error);
  EXPECT_THROW(align_xcorr(ramp, flat, kFs), Error);
  EXPECT_THROW(align_xcorr(std::span(ramp).first(200), std::span(ramp).first(200), kFs), Error);
  EXPECT_THROW(align_xcorr(std::span(ramp).first(300), std::span(ramp).first(299), kFs), Error);
}

TEST(Align, ApplyTrimsToOverlap) {
  SubjectRecord r;
  r.ppg = {0, 1, 2, 3, 4, 5};
  r.abp = {10, 11, 12, 13, 14, 15};
  auto a = r;
  apply_alignment(a, 2);
  EXPECT_EQ(a.ppg, (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(a.abp, (std::vector<double>{12, 13, 14, 15}));
  auto b = r;
  apply_alignment(b, -1);
  EXPECT_EQ(b.ppg, (std::vector<double>{1, 2, 3, 4, 5}));
  EXPECT_EQ(b.abp, (std::vector<double>{10, 11, 12, 13, 14}));
}

TEST(Synth, AlignmentRecoversPulseTransitLag) {
  const auto c = synth_generate(10, 31);
  for (std::size_t s = 0; s < c.truth.size(); ++s) {
    const int lag = align_xcorr(c.records[s].ppg, c.records[s].abp, kFs);
    // The PPG trails the pressure, so the pressure leads by about lag_s.
    EXPECT_NEAR(-lag / kFs, c.truth[s].lag_s, 0.06) << "subject " << s;
  }
}

TEST(Labels, ConstantPulses) {
  const auto abp = abp_waveform(120, 80, 72, kFs, 5.0);
  const auto l = extract_labels(abp, kFs);
  EXPECT_GE(l.beats, 5);
  EXPECT_NEAR(l.sbp, 120.0, 1e-9);
  EXPECT_NEAR(l.dbp, 80.0, 1e-9);
}

TEST(Labels, MedianOfVaryingPeaks) {
  // Three beats whose peaks are 118, 120, 122.
  std::vector<double> abp;
  for (double pk : {118.0, 120.0, 122.0}) {
    const auto beat = abp_waveform(pk, 80, 60, kFs, 1.0);
    abp.insert(abp.end(), beat.begin(), beat.end());
  }
  abp.push_back(80.0);
  EXPECT_DOUBLE_EQ(extract_labels(abp, kFs).sbp, 120.0);
}

TEST(Labels, MedianIgnoresOneCorruptedBeat) {
  std::vector<double> abp;
  for (int b = 0; b < 10; ++b) {
    const auto beat = abp_waveform(b == 4 ? 200.0 : 120.0, 80, 100, kFs, 0.6);
    abp.insert(abp.end(), beat.begin(), beat.end());
  }
  abp.push_back(80.0);
  const auto l = extract_labels(abp, kFs);
  EXPECT_EQ(l.beats, 10);
  EXPECT_DOUBLE_EQ(l.sbp, 120.0);
}

TEST(Labels, TooFewBeats) {
  const auto abp = abp_waveform(120, 80, 25, kFs, 5.0);  // two full beats
  const auto l = extract_labels(abp, kFs);
  EXPECT_LT(l.beats, 3);
  EXPECT_EQ(l.sbp, 0.0);
}

TEST(Screen, CleanWindowIsValid) {
  auto w = make_window(120, 80, 72);
  screen_window(w, kFs);
  EXPECT_TRUE(w.valid) << w.reason;
  EXPECT_NEAR(w.hr, 72.0, 1.5);
}

TEST(Screen, RejectionReasons) {
  struct Case {
    double sbp, dbp, hr;
    const char* reason;
  };
  for (const Case& c : {Case{230, 80, 72, "amplitude"}, Case{120, 25, 72, "amplitude"}, Case{88, 80, 72, "pulse pressure"},
                        Case{120, 80, 150, "hr"}, Case{120, 80, 30, "hr"}}) {
    auto w = make_window(c.sbp, c.dbp, c.hr);
    screen_window(w, kFs);
    EXPECT_FALSE(w.valid);
    EXPECT_EQ(w.reason, c.reason) << c.sbp << "/" << c.dbp << " @" << c.hr;
  }
}

TEST(Screen, PulsePressureBoundaryIsStrict) {
  auto at = make_window(90, 80, 72);
  screen_window(at, kFs);
  EXPECT_EQ(at.reason, "pulse pressure");
  auto above = make_window(90.5, 80, 72);
  screen_window(above, kFs);
  EXPECT_TRUE(above.valid) << above.reason;
}

TEST(Screen, IrregularPpgIsRejected) {
  auto w = make_window(120, 80, 72);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  // Rescale every beat of the PPG by a random amount.
  const auto peaks = detect_beats(w.ppg, kFs);
  double g = 1.0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < w.ppg.size(); ++i) {
    if (next < peaks.size() && static_cast<int>(i) >= peaks[next] - 20) {
      g = u(rng);
      ++next;
    }
    w.ppg[i] *= g;
  }
  screen_window(w, kFs);
  EXPECT_FALSE(w.valid);
  EXPECT_EQ(w.reason, "ppg");
}

TEST(Segment, SixtySecondsGiveTwelveWindows) {
  const auto c = synth_generate(1, 1);
  const auto ws = segment_and_filter(c.records[0]);
  ASSERT_EQ(ws.size(), 12u);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    EXPECT_EQ(ws[k].ppg.size(), 625u);
    EXPECT_EQ(ws[k].abp.size(), 625u);
    EXPECT_EQ(ws[k].index, static_cast<int>(k));
  }
}

TEST(Segment, ShortRecordGivesNoWindows) {
  SubjectRecord r;
  r.ppg.assign(600, 0.0);
  r.abp.assign(600, 100.0);
  EXPECT_TRUE(segment_and_filter(r).empty());
}

TEST(Segment, ValidWindowsRespectEveryBound) {
  SynthOptions o;
  o.offset_std = 25.0;  // push some windows out of range
  const auto c = synth_generate(30, 13, o);
  int valid = 0, invalid = 0;
  for (const auto& r : c.records)
    for (const auto& w : preprocess_record(r)) {
      if (!w.valid) {
        ++invalid;
        EXPECT_FALSE(w.reason.empty());
        continue;
      }
      ++valid;
      EXPECT_EQ(w.ppg.size(), 625u);
      EXPECT_GE(*std::min_element(w.abp.begin(), w.abp.end()), 30.0);
      EXPECT_LE(*std::max_element(w.abp.begin(), w.abp.end()), 220.0);
      EXPECT_GT(w.sbp - w.dbp, 10.0);
      EXPECT_GE(w.hr, 35.0);
      EXPECT_LE(w.hr, 140.0);
    }
  EXPECT_GT(valid, 0);
  EXPECT_GT(invalid, 0);
}

TEST(Segment, SynthLabelsMatchTruth) {
  const auto c = synth_generate(10, 17);
  for (std::size_t s = 0; s < c.records.size(); ++s) {
    int valid = 0;
    for (const auto& w : preprocess_record(c.records[s])) {
      if (!w.valid) continue;
      ++valid;
      EXPECT_NEAR(w.sbp, c.truth[s].sbp, 2.0);
      EXPECT_NEAR(w.dbp, c.truth[s].dbp, 2.0);
    }
    EXPECT_GE(valid, 8) << "subject " << s;
  }
}

TEST(Segment, DeterministicAndOrderPreserving) {
  const auto c = synth_generate(2, 9);
  const auto a = preprocess_record(c.records[1]);
  const auto b = preprocess_record(c.records[1]);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].index, static_cast<int>(k));
    EXPECT_EQ(a[k].ppg, b[k].ppg);
    EXPECT_EQ(a[k].sbp, b[k].sbp);
    EXPECT_EQ(a[k].reason, b[k].reason);
  }
}

TEST(Baseline, ValleysAtZero) {
  const auto c = synth_generate(5, 23);
  for (const auto& r : c.records) {
    for (int k = 0; k < 12; ++k) {
      std::span<const double> seg(r.ppg.data() + k * 625, 625);
      const auto out = baseline_correct(seg, kFs);
      const auto valleys = valleys_between(seg, detect_beats(seg, kFs));
      ASSERT_FALSE(valleys.empty());
      for (int v : valleys) EXPECT_LE(std::abs(out[static_cast<std::size_t>(v)]), 1e-6);
    }
  }
}

TEST(Baseline, RemovesSlowWander) {
  auto w = make_window(120, 80, 72);
  std::vector<double> drifted = w.ppg;
  for (std::size_t i = 0; i < drifted.size(); ++i) drifted[i] += 0.5 * static_cast<double>(i) / 625.0;
  const auto a = baseline_correct(w.ppg, kFs), b = baseline_correct(drifted, kFs);
  // Between the first and last valley a linear trend is removed almost exactly.
  const auto valleys = valleys_between(std::span<const double>(w.ppg), detect_beats(w.ppg, kFs));
  for (int i = valleys.front(); i <= valleys.back(); ++i)
    EXPECT_NEAR(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)], 0.05);
}

TEST(Splits, FortySubjectsFiveFolds) {
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) ids.push_back("S" + std::to_string(i));
  const auto s = subject_kfold(ids, 5, 7);
  ASSERT_EQ(s.folds.size(), 5u);
  std::multiset<std::string> tested;
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.test.size(), 8u);
    EXPECT_EQ(f.train.size() + f.val.size(), 32u);
    EXPECT_EQ(f.val.size(), 6u);
    std::set<std::string> tr(f.train.begin(), f.train.end()), va(f.val.begin(), f.val.end()),
        te(f.test.begin(), f.test.end());
    for (const auto& id : te) {
      EXPECT_FALSE(tr.count(id));
      EXPECT_FALSE(va.count(id));
    }
    for (const auto& id : va) EXPECT_FALSE(tr.count(id));
    EXPECT_EQ(tr.size() + va.size() + te.size(), 40u);
    tested.insert(f.test.begin(), f.test.end());
  }
  EXPECT_EQ(tested, std::multiset<std::string>(ids.begin(), ids.end()));
  const auto again = subject_kfold(ids, 5, 7);
  EXPECT_EQ(again.to_json(), s.to_json());
  EXPECT_NE(subject_kfold(ids, 5, 8).to_json(), s.to_json());
}

TEST(Splits, ManifestRoundTripAndErrors) {
  const auto s = subject_kfold({"a", "b", "c", "d", "e", "f", "g"}, 3, 1);
  EXPECT_EQ(SplitDataset::from_json(s.to_json()).to_json(), s.to_json());
  EXPECT_THROW(subject_kfold({"a", "b"}, 3, 1), Error);
  EXPECT_THROW(subject_kfold({"a", "a", "b"}, 2, 1), Error);
}

TEST(Splits, FinetuneSizesAndOrdering) {
  const auto t80 = finetune_split(75, FinetuneMode::Temporal, 0.8);
  EXPECT_EQ(t80.eval.size(), 15u);
  EXPECT_EQ(t80.train.size(), 60u);
  EXPECT_LT(t80.train.back(), t80.eval.front());
  EXPECT_EQ(t80.eval.back(), 74);
  const auto t20 = finetune_split(75, FinetuneMode::Temporal, 0.2);
  EXPECT_EQ(t20.eval.size(), 15u);
  EXPECT_EQ(t20.train.size(), 15u);
  EXPECT_LT(t20.train.back(), t20.eval.front());
  for (double frac : {0.8, 0.2}) {
    const auto s = finetune_split(75, FinetuneMode::Shuffled, frac, 3);
    std::set<int> e(s.eval.begin(), s.eval.end());
    EXPECT_EQ(s.eval.size(), 15u);
    EXPECT_EQ(s.train.size(), frac > 0.5 ? 60u : 15u);
    for (int i : s.train) EXPECT_FALSE(e.count(i));
  }
  EXPECT_THROW(finetune_split(4, FinetuneMode::Temporal, 0.8), Error);
  EXPECT_THROW(finetune_split(20, FinetuneMode::Temporal, 0.5), Error);
}

TEST(RecordIo, CsvRoundTrip) {
  const auto c = synth_generate(1, 2, {.seconds = 6.0});
  const auto path = std::filesystem::temp_directory_path() / "bpc_rec_roundtrip.csv";
  save_record_csv(c.records[0], path);
  const auto r = load_record_csv(path, "X");
  EXPECT_EQ(r.id, "X");
  EXPECT_DOUBLE_EQ(r.fs, 125.0);
  EXPECT_EQ(r.ppg, c.records[0].ppg);
  EXPECT_EQ(r.abp, c.records[0].abp);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace bpc
