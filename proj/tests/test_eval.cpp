// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "core/tensor.hpp"
#include "eval/filter.hpp"
#include "eval/metrics.hpp"
#include "eval/pareto.hpp"
#include "signal/synth.hpp"

namespace bpc {
namespace {

constexpr double kFs = 125.0;

std::vector<double> tone(double f, int n, double amp = 1.0) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = amp * std::sin(2.0 * std::numbers::pi * f * i / kFs);
  return x;
}

double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

TEST(Butterworth, ResponseMatchesReferenceDesign) {
  // |H| of a 5th-order 8 Hz design at 125 Hz, from an independent
  // zero-pole-gain implementation.
  const auto sos = butter_lowpass(5, 8.0, kFs);
  ASSERT_EQ(sos.size(), 3u);
  const std::pair<double, double> ref[] = {
      {0.0, 1.0}, {4.0, 0.999559478248422}, {8.0, 0.707106781186548}, {20.0, 0.00700381146796408}, {50.0, 1.27370794465336e-06}};
  for (auto [f, g] : ref) EXPECT_NEAR(sos_gain(sos, f, kFs) / g, 1.0, 1e-9) << f;
}

TEST(Butterworth, InvalidCutoff) {
  EXPECT_THROW(butter_lowpass(5, 0.0, kFs), Error);
  EXPECT_THROW(butter_lowpass(5, 62.5, kFs), Error);
  EXPECT_THROW(butter_lowpass(0, 5.0, kFs), Error);
}

TEST(Filtfilt, MatchesReferenceSamples) {
  std::vector<double> x(200);
  for (int i = 0; i < 200; ++i) x[static_cast<std::size_t>(i)] = std::sin(0.3 * i) + 0.1 * i / 200.0;
  const auto y = sosfiltfilt(butter_lowpass(5, 8.0, kFs), x);
  const std::pair<int, double> ref[] = {{0, -0.009417368484066813},
                                        {1, 0.2663923495240313},
                                        {50, 0.6441248533124797},
                                        {100, -0.8907442415515945},
                                        {199, 0.08741234950463989}};
  for (auto [i, v] : ref) EXPECT_NEAR(y[static_cast<std::size_t>(i)], v, 1e-9) << i;
}

TEST(Filtfilt, DcUnchanged) {
  const std::vector<double> dc(625, 97.5);
  const auto y = smooth_output(dc, kFs);
  ASSERT_EQ(y.size(), dc.size());
  for (double v : y) EXPECT_NEAR(v, 97.5, 1e-9);
}

TEST(Filtfilt, FiftyHertzToneAttenuatedFortyDb) {
  const auto x = tone(50.0, 1250);
  const auto y = sosfiltfilt(butter_lowpass(5, 8.0, kFs), x);
  const double ratio = rms(std::span(y).subspan(100, 1050)) / rms(std::span(x).subspan(100, 1050));
  EXPECT_LE(20.0 * std::log10(ratio), -40.0);
}

TEST(Filtfilt, ZeroPhaseOnPassbandTone) {
  const auto x = tone(1.0, 1250);
  const auto y = sosfiltfilt(butter_lowpass(5, 8.0, kFs), x);
  // Zero phase: peaks stay where they were.
  for (std::size_t i = 200; i < 1050; ++i) EXPECT_NEAR(y[i], x[i], 2e-3);
}

TEST(Filtfilt, LinearAndLengthPreserving) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<double> a(500), b(500), ab(500);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = n01(rng);
    b[i] = n01(rng);
    ab[i] = 2.0 * a[i] - 3.0 * b[i];
  }
  const auto sos = butter_lowpass(5, 6.0, kFs);
  const auto fa = sosfiltfilt(sos, a), fb = sosfiltfilt(sos, b), fab = sosfiltfilt(sos, ab);
  ASSERT_EQ(fab.size(), ab.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(fab[i], 2.0 * fa[i] - 3.0 * fb[i], 1e-9);
}

TEST(Filtfilt, ShortInputs) {
  const auto sos = butter_lowpass(5, 6.0, kFs);
  EXPECT_TRUE(sosfiltfilt(sos, std::vector<double>{}).empty());
  EXPECT_EQ(sosfiltfilt(sos, std::vector<double>{3.0}).size(), 1u);
  EXPECT_EQ(sosfiltfilt(sos, std::vector<double>{1.0, 2.0, 3.0}).size(), 3u);
}

TEST(Smooth, CutoffRuleAndClamp) {
  bool clamped = true;
  const std::vector<double> x(100, 100.0);
  EXPECT_DOUBLE_EQ(adaptive_cutoff(x, kFs, {}, &clamped), 10.0);
  EXPECT_FALSE(clamped);
  const std::vector<double> small(100, 2.0);
  EXPECT_DOUBLE_EQ(adaptive_cutoff(small, kFs, {}, &clamped), 1.0);
  EXPECT_TRUE(clamped);
  const std::vector<double> big(100, 1000.0);
  EXPECT_DOUBLE_EQ(adaptive_cutoff(big, kFs, {}, &clamped), 0.45 * kFs);
  EXPECT_TRUE(clamped);
  EXPECT_THROW(smooth_output(std::vector<double>{}, kFs), Error);
}

TEST(Smooth, TwiceCloseToOnce) {
  auto x = abp_waveform(120, 80, 75, kFs, 5.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 3.0);
  for (double& v : x) v += n01(rng);
  const auto once = smooth_output(x, kFs);
  const auto twice = smooth_output(once, kFs);
  double e1 = 0.0, e2 = 0.0;
  for (std::size_t i = 0; i < once.size(); ++i) {
    e1 += once[i] * once[i];
    e2 += twice[i] * twice[i];
  }
  EXPECT_NEAR(e2 / e1, 1.0, 0.05);
}

TEST(Smooth, LabelsSurviveSmoothing) {
  const auto wave = abp_waveform(125, 78, 70, kFs, 5.0);
  const auto est = labels_from_waveform(wave, kFs);
  ASSERT_TRUE(est.has_value());
  EXPECT_NEAR(est->sbp, 125.0, 2.0);
  EXPECT_NEAR(est->dbp, 78.0, 2.0);
  EXPECT_FALSE(labels_from_waveform(std::vector<double>(625, 90.0), kFs).has_value());
}

TEST(Metrics, Arithmetic) {
  const std::vector<Estimate> p = {{120, 80}, {130, 90}}, t = {{125, 80}, {135, 90}};
  const auto r = compute_mae(p, t);
  EXPECT_DOUBLE_EQ(r.sbp.mae, 5.0);
  EXPECT_DOUBLE_EQ(r.sbp.me, -5.0);
  EXPECT_DOUBLE_EQ(r.sbp.std, 0.0);
  EXPECT_DOUBLE_EQ(r.dbp.mae, 0.0);
  EXPECT_EQ(r.n_windows, 2);
  EXPECT_EQ(compute_mae(t, t).sbp.mae, 0.0);
  const std::vector<Estimate> one_p = {{100, 60}}, one_t = {{110, 70}};
  EXPECT_EQ(compute_mae(one_p, one_t).sbp.std, 0.0);
}

TEST(Metrics, ErrorsAndPermutationInvariance) {
  EXPECT_THROW(compute_mae(std::vector<Estimate>{}, std::vector<Estimate>{}), Error);
  EXPECT_THROW(compute_mae(std::vector<Estimate>{{1, 1}}, std::vector<Estimate>{}), Error);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(60, 160);
  std::vector<Estimate> p(40), t(40);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = {u(rng), u(rng)};
    t[i] = {u(rng), u(rng)};
  }
  const auto r = compute_mae(p, t);
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Estimate> p2, t2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  const auto r2 = compute_mae(p2, t2);
  EXPECT_NEAR(r.sbp.mae, r2.sbp.mae, 1e-12);
  EXPECT_NEAR(r.dbp.std, r2.dbp.std, 1e-12);
  EXPECT_GE(r.sbp.std, 0.0);
}

TEST(Metrics, PerSubjectBreakdown) {
  const std::vector<Estimate> p = {{120, 80}, {130, 90}, {100, 70}}, t = {{121, 80}, {133, 90}, {100, 60}};
  const std::vector<std::string> s = {"a", "a", "b"};
  const auto r = compute_mae(p, t, s);
  EXPECT_EQ(r.n_subjects, 2);
  ASSERT_EQ(r.per_subject.size(), 2u);
  EXPECT_DOUBLE_EQ(r.per_subject.at("a").sbp.mae, 2.0);
  EXPECT_DOUBLE_EQ(r.per_subject.at("b").dbp.mae, 10.0);
  EXPECT_EQ(r.to_json()["per_subject"]["a"]["n_windows"], 2);
}

TEST(Aami, ThresholdsAndCaveat) {
  const auto good = aami_check(1.39, 2.36, 100);
  EXPECT_TRUE(good.pass);
  EXPECT_TRUE(good.note.empty());
  EXPECT_FALSE(aami_check(5.1, 2.0, 100).pass);
  EXPECT_FALSE(aami_check(5.01, 8.0, 100).pass);
  EXPECT_FALSE(aami_check(0.0, 8.01, 100).pass);
  EXPECT_TRUE(aami_check(-5.0, 8.0, 100).pass);
  const auto small = aami_check(1.39, 2.36, 40);
  EXPECT_TRUE(small.pass);
  EXPECT_NE(small.note.find("85"), std::string::npos);
  EXPECT_FALSE(aami_check(9.0, 9.0, 84).note.empty());
}

ParetoPoint pt(double c, double e) {
  ParetoPoint p;
  p.cost = c;
  p.mae_sbp = e;
  p.mae_dbp = e;
  return p;
}

TEST(Pareto, SmallExamples) {
  const std::vector<ParetoPoint> pts = {pt(10, 5), pt(20, 4), pt(15, 6)};
  const auto f = pareto_front(pts, Objective::Sbp);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].cost, 10);
  EXPECT_EQ(f[1].cost, 20);
  EXPECT_EQ(pareto_front(std::vector<ParetoPoint>{pt(3, 3)}, Objective::Sbp).size(), 1u);
  auto a = pt(5, 5), b = pt(5, 5);
  a.model_ref = "first";
  b.model_ref = "second";
  const auto d = pareto_front(std::vector<ParetoPoint>{b, pt(9, 9), a}, Objective::Dbp);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].model_ref, "second");
  EXPECT_EQ(d[1].model_ref, "first");
}

TEST(Pareto, BruteForceProperties) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> ui(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ParetoPoint> pts;
    const int n = 1 + trial % 25;
    for (int i = 0; i < n; ++i) pts.push_back(pt(ui(rng), ui(rng)));
    const auto f = pareto_front(pts, Objective::Sbp);
    for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i - 1].cost, f[i].cost);
    for (const auto& a : f)
      for (const auto& b : f) EXPECT_FALSE(dominates(a, b, Objective::Sbp));
    std::size_t kept = 0;
    for (const auto& p : pts) {
      bool dominated = false;
      for (const auto& q : pts) dominated |= q.cost <= p.cost && q.mae_sbp <= p.mae_sbp && (q.cost < p.cost || q.mae_sbp < p.mae_sbp);
      if (!dominated) ++kept;
      else {
        bool covered = false;
        for (const auto& q : f) covered |= dominates(q, p, Objective::Sbp);
        EXPECT_TRUE(covered);
      }
    }
    EXPECT_EQ(kept, f.size());
  }
}

TEST(Pareto, FilesRoundTrip) {
  auto p = pt(1234, 7.5);
  p.stage = "pit";
  p.lambda = 3e-9;
  p.model_ref = "pit/l03";
  const std::vector<ParetoPoint> pts = {p, pt(100, 9)};
  const auto dir = std::filesystem::temp_directory_path();
  write_points_csv(pts, dir / "bpc_pts.csv");
  const auto back = read_points_csv(dir / "bpc_pts.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].lambda, 3e-9);
  EXPECT_EQ(back[0].model_ref, "pit/l03");
  EXPECT_EQ(pareto_point_from_json(to_json(p)).cost, 1234);
  write_pareto_svg(pts, Objective::Sbp, dir / "bpc_pts.svg");
  std::ifstream svg(dir / "bpc_pts.svg");
  std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("<svg"), std::string::npos);
  EXPECT_NE(text.find("polyline"), std::string::npos);
}

}  // namespace
}  // namespace bpc
