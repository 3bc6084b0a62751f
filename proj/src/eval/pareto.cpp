// SPDX-License-Identifier: Apache-2.0
#include "eval/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "core/tensor.hpp"

namespace bpc {

Objective objective_from_name(const std::string& s) {
  if (s == "sbp") return Objective::Sbp;
  if (s == "dbp") return Objective::Dbp;
  if (s == "mean") return Objective::Mean;
  throw Error("unknown objective '" + s + "' (expected sbp, dbp or mean)");
}

double objective_value(const ParetoPoint& p, Objective o) {
  switch (o) {
    case Objective::Sbp: return p.mae_sbp;
    case Objective::Dbp: return p.mae_dbp;
    case Objective::Mean: return 0.5 * (p.mae_sbp + p.mae_dbp);
  }
  return p.mae_sbp;
}

std::vector<ParetoPoint> with_cost_axis(std::span<const ParetoPoint> pts, CostAxis axis) {
  std::vector<ParetoPoint> out(pts.begin(), pts.end());
  for (auto& p : out) {
    if (axis == CostAxis::Params) p.cost = p.params;
    if (axis == CostAxis::Bits) p.cost = p.bits;
  }
  return out;
}

bool dominates(const ParetoPoint& a, const ParetoPoint& b, Objective o) {
  const double ea = objective_value(a, o), eb = objective_value(b, o);
  return a.cost <= b.cost && ea <= eb && (a.cost < b.cost || ea < eb);
}

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points, Objective o) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a].cost < points[b].cost; });
  std::vector<ParetoPoint> out;
  for (std::size_t i : order) {
    const bool dominated = std::any_of(points.begin(), points.end(), [&](const ParetoPoint& q) { return dominates(q, points[i], o); });
    if (!dominated) out.push_back(points[i]);
  }
  return out;
}

nlohmann::json to_json(const ParetoPoint& p) {
  return {{"cost", p.cost},   {"params", p.params}, {"bits", p.bits},           {"mae_sbp", p.mae_sbp},
          {"mae_dbp", p.mae_dbp}, {"stage", p.stage}, {"lambda", p.lambda}, {"model_ref", p.model_ref}};
}

ParetoPoint pareto_point_from_json(const nlohmann::json& j) {
  ParetoPoint p;
  p.cost = j.at("cost").get<double>();
  p.params = j.value("params", 0.0);
  p.bits = j.value("bits", 0.0);
  p.mae_sbp = j.at("mae_sbp").get<double>();
  p.mae_dbp = j.at("mae_dbp").get<double>();
  p.stage = j.value("stage", "");
  p.lambda = j.value("lambda", 0.0);
  p.model_ref = j.value("model_ref", "");
  return p;
}

void write_points_csv(std::span<const ParetoPoint> pts, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "stage,lambda,cost,mae_sbp,mae_dbp,params,bits,model_ref\n";
  for (const auto& p : pts)
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", p.stage, p.lambda, p.cost, p.mae_sbp,
                       p.mae_dbp, p.params, p.bits, p.model_ref);
}

std::vector<ParetoPoint> read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("stage,lambda,cost,mae_sbp,mae_dbp", 0) != 0) throw Error(path.string() + ": not a points CSV");
  std::vector<ParetoPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (line.back() == ',') c.emplace_back();
    if (c.size() < 8) throw Error(path.string() + ": short row '" + line + "'");
    ParetoPoint p;
    p.stage = c[0];
    p.lambda = std::stod(c[1]);
    p.cost = std::stod(c[2]);
    p.mae_sbp = std::stod(c[3]);
    p.mae_dbp = std::stod(c[4]);
    p.params = std::stod(c[5]);
    p.bits = std::stod(c[6]);
    p.model_ref = c[7];
    out.push_back(p);
  }
  return out;
}

void write_points_json(std::span<const ParetoPoint> pts, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pts) j.push_back(to_json(p));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  nlohmann::json j = r.to_json();
  const auto a = aami_check(r);
  j["aami"] = {{"pass", a.pass}, {"note", a.note}};
  out << j.dump(2) << '\n';
}

void write_metrics_csv(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "subject,n_windows,mae_sbp,me_sbp,std_sbp,mae_dbp,me_dbp,std_dbp\n";
  auto row = [&](const std::string& id, const MetricsReport& m) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", id, m.n_windows, m.sbp.mae, m.sbp.me, m.sbp.std,
                       m.dbp.mae, m.dbp.me, m.dbp.std);
  };
  row("all", r);
  for (const auto& [id, m] : r.per_subject) row(id, m);
}

void write_pareto_svg(std::span<const ParetoPoint> all, Objective o, const std::filesystem::path& path) {
  if (all.empty()) throw Error("write_pareto_svg: no points");
  const auto front = pareto_front(all, o);
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 20, B = 50;
  double cmin = 1e300, cmax = 0, emin = 1e300, emax = 0;
  for (const auto& p : all) {
    cmin = std::min(cmin, p.cost);
    cmax = std::max(cmax, p.cost);
    emin = std::min(emin, objective_value(p, o));
    emax = std::max(emax, objective_value(p, o));
  }
  const double lx0 = std::log10(std::max(cmin, 1e-12)), lx1 = std::max(std::log10(std::max(cmax, 1e-12)), lx0 + 1e-9);
  if (emax - emin < 1e-9) emax = emin + 1.0;
  auto px = [&](double c) { return L + (std::log10(std::max(c, 1e-12)) - lx0) / (lx1 - lx0) * (W - L - R); };
  auto py = [&](double e) { return H - B - (e - emin) / (emax - emin) * (H - T - B); };

  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << fmt::format(R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)svg", W, H) << '\n';
  out << fmt::format(R"svg(<rect width="{}" height="{}" fill="white"/>)svg", W, H) << '\n';
  out << fmt::format(R"svg(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><line x1="{0}" y1="{3}" x2="{0}" y2="{1}" stroke="black"/>)svg",
                     L, H - B, W - R, T)
      << '\n';
  out << fmt::format(R"svg(<text x="{}" y="{}" text-anchor="middle">cost (log scale, {:.3g} to {:.3g})</text>)svg", (L + W - R) / 2, H - 15, cmin, cmax) << '\n';
  out << fmt::format(R"svg(<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">MAE [mmHg] ({:.3g} to {:.3g})</text>)svg",
                     (T + H - B) / 2, (T + H - B) / 2, emin, emax)
      << '\n';
  auto colour = [](const std::string& s) {
    if (s == "nas") return "#1f77b4";
    if (s == "pit") return "#2ca02c";
    if (s == "mps") return "#d62728";
    return "#7f7f7f";
  };
  for (const auto& p : all)
    out << fmt::format(R"svg(<circle cx="{:.2f}" cy="{:.2f}" r="4" fill="{}" fill-opacity="0.6"><title>{} lambda={:.3g} cost={:.6g} mae={:.3f}</title></circle>)svg",
                       px(p.cost), py(objective_value(p, o)), colour(p.stage), p.stage, p.lambda, p.cost, objective_value(p, o))
        << '\n';
  std::string poly;
  for (std::size_t i = 0; i < front.size(); ++i) {
    const double x = px(front[i].cost), y = py(objective_value(front[i], o));
    if (i > 0) poly += fmt::format("{:.2f},{:.2f} ", x, py(objective_value(front[i - 1], o)));
    poly += fmt::format("{:.2f},{:.2f} ", x, y);
  }
  out << fmt::format(R"svg(<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>)svg", poly) << '\n';
  out << "</svg>\n";
}

}  // namespace bpc
