// SPDX-License-Identifier: Apache-2.0
#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace bpc {

double grad_rel_error(double a, double n, double floor) {
  if (!std::isfinite(a) || !std::isfinite(n)) throw Error("non-finite gradient during check");
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

namespace {

std::vector<std::size_t> sample_entries(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> out;
  if (n <= cap) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
  } else {
    for (std::size_t k = 0; k < cap; ++k) out.push_back(k * n / cap);
  }
  return out;
}

// Losses at +eps, 0 and -eps around one entry.
struct Probe {
  double lp, l0, lm, eps, kink_tol;
  bool straddles_kink() const {
    if (kink_tol <= 0.0) return false;
    return grad_rel_error((lp - l0) / eps, (l0 - lm) / eps) > kink_tol;
  }
  double central() const { return (lp - lm) / (2.0 * eps); }
};

void record(GradCheckReport& r, double rel, const std::string& where) {
  ++r.checked;
  if (r.worst.empty() || rel > r.max_rel) {
    r.max_rel = rel;
    r.worst = where;
  }
}

}  // namespace

GradCheckReport grad_check_params(ParamStore& ps, const std::vector<int>& which, const std::function<double()>& loss,
                                  const std::function<void()>& grads, double eps, std::size_t max_entries,
                                  double kink_tol) {
  grads();
  const double l0 = kink_tol > 0.0 ? loss() : 0.0;
  std::vector<std::vector<double>> analytic;
  for (int i : which) {
    const auto g = ps.value(i).grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  GradCheckReport r;
  for (std::size_t k = 0; k < which.size(); ++k) {
    auto w = ps.value(which[k]).data();
    for (std::size_t e : sample_entries(w.size(), max_entries)) {
      const double orig = w[e];
      w[e] = orig + eps;
      const double lp = loss();
      w[e] = orig - eps;
      const double lm = loss();
      w[e] = orig;
      const Probe p{lp, l0, lm, eps, kink_tol};
      if (p.straddles_kink()) {
        ++r.skipped;
        continue;
      }
      record(r, grad_rel_error(analytic[k][e], p.central()), fmt::format("{}[{}]", ps.at(which[k]).name, e));
    }
  }
  return r;
}

GradCheckReport grad_check(ModelGraph& g, const Tensor& x, const RunOptions& opts, const GradCheckOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> nd;
  const Tensor y0 = g.forward(x, opts);
  if (!y0.all_finite()) throw Error("non-finite forward output during gradient check");
  Tensor r(y0.shape());
  for (double& v : r.data()) v = nd(rng);

  Tensor xin = x;
  auto loss = [&] {
    const Tensor y = g.forward(xin, opts);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  auto grads = [&] {
    g.params.zero_grad();
    (void)g.forward(xin, opts);
    g.backward(r, opts);
  };

  std::vector<int> which;
  for (int i = 0; i < g.params.size(); ++i)
    if (std::find(o.roles.begin(), o.roles.end(), g.params.at(i).role) != o.roles.end()) which.push_back(i);
  GradCheckReport rep = grad_check_params(g.params, which, loss, grads, o.eps, o.max_entries, o.kink_tol);

  if (o.check_input) {
    grads();
    const double l0 = o.kink_tol > 0.0 ? loss() : 0.0;
    const Tensor gin = g.input_grad();
    for (std::size_t e : sample_entries(xin.size(), o.max_entries)) {
      const double orig = xin[e];
      xin[e] = orig + o.eps;
      const double lp = loss();
      xin[e] = orig - o.eps;
      const double lm = loss();
      xin[e] = orig;
      const Probe p{lp, l0, lm, o.eps, o.kink_tol};
      if (p.straddles_kink()) {
        ++rep.skipped;
        continue;
      }
      record(rep, grad_rel_error(gin[e], p.central()), fmt::format("input[{}]", e));
    }
  }
  return rep;
}

}  // namespace bpc
