// SPDX-License-Identifier: Apache-2.0
#include "signal/peaks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/tensor.hpp"

namespace bpc {

double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of an empty sequence");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double peak_prominence(std::span<const double> x, int i) {
  const int n = static_cast<int>(x.size());
  const double h = x[static_cast<std::size_t>(i)];
  double left = h;
  for (int j = i - 1; j >= 0 && x[static_cast<std::size_t>(j)] <= h; --j) left = std::min(left, x[static_cast<std::size_t>(j)]);
  double right = h;
  for (int j = i + 1; j < n && x[static_cast<std::size_t>(j)] <= h; ++j) right = std::min(right, x[static_cast<std::size_t>(j)]);
  return h - std::max(left, right);
}

std::vector<int> find_peaks(std::span<const double> x, const PeakOptions& opts) {
  const int n = static_cast<int>(x.size());
  std::vector<int> cand;
  for (int i = 1; i + 1 < n;) {
    if (x[static_cast<std::size_t>(i)] > x[static_cast<std::size_t>(i - 1)]) {
      // Walk across a plateau and keep its middle sample.
      int j = i;
      while (j + 1 < n && x[static_cast<std::size_t>(j + 1)] == x[static_cast<std::size_t>(i)]) ++j;
      if (j + 1 < n && x[static_cast<std::size_t>(j + 1)] < x[static_cast<std::size_t>(i)]) cand.push_back((i + j) / 2);
      i = j + 1;
    } else {
      ++i;
    }
  }
  std::vector<int> prominent;
  for (int p : cand)
    if (peak_prominence(x, p) >= opts.min_prominence) prominent.push_back(p);
  if (opts.min_distance <= 1) return prominent;

  std::vector<int> order(prominent.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return x[static_cast<std::size_t>(prominent[static_cast<std::size_t>(a)])] >
           x[static_cast<std::size_t>(prominent[static_cast<std::size_t>(b)])];
  });
  std::vector<bool> keep(prominent.size(), true);
  for (int o : order) {
    if (!keep[static_cast<std::size_t>(o)]) continue;
    for (std::size_t k = 0; k < prominent.size(); ++k)
      if (static_cast<int>(k) != o && keep[k] &&
          std::abs(prominent[k] - prominent[static_cast<std::size_t>(o)]) < opts.min_distance)
        keep[k] = false;
  }
  std::vector<int> out;
  for (std::size_t k = 0; k < prominent.size(); ++k)
    if (keep[k]) out.push_back(prominent[k]);
  return out;
}

std::vector<int> valleys_between(std::span<const double> x, std::span<const int> peaks) {
  std::vector<int> out;
  for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
    const auto b = x.begin() + peaks[k], e = x.begin() + peaks[k + 1];
    out.push_back(static_cast<int>(std::min_element(b, e) - x.begin()));
  }
  return out;
}

std::vector<int> detect_beats(std::span<const double> x, double fs, double max_bpm, double rel_prominence) {
  if (x.empty()) return {};
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  PeakOptions o;
  o.min_distance = std::max(1, static_cast<int>(std::floor(fs * 60.0 / max_bpm)));
  o.min_prominence = rel_prominence * (*hi - *lo);
  if (o.min_prominence <= 0.0) return {};
  return find_peaks(x, o);
}

double heart_rate_bpm(std::span<const int> peaks, double fs) {
  if (peaks.size() < 2) return 0.0;
  std::vector<double> d;
  for (std::size_t k = 1; k < peaks.size(); ++k) d.push_back(peaks[k] - peaks[k - 1]);
  return 60.0 * fs / median(d);
}

}  // namespace bpc
