// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval/metrics.hpp"

namespace bpc {

struct ParetoPoint {
  double cost = 0.0;  // parameters, or total weight bits for quantized models
  double params = 0.0;
  double bits = 0.0;  // weight memory in bits; float models count 32 per parameter
  double mae_sbp = 0.0;
  double mae_dbp = 0.0;
  std::string stage;  // nas, pit or mps
  double lambda = 0.0;
  std::string model_ref;
};

enum class Objective { Sbp, Dbp, Mean };

/// Which field serves as the cost axis.
enum class CostAxis { Native, Params, Bits };

/// Copy of `pts` with `cost` replaced by the chosen axis.
std::vector<ParetoPoint> with_cost_axis(std::span<const ParetoPoint> pts, CostAxis axis);

Objective objective_from_name(const std::string& s);
double objective_value(const ParetoPoint& p, Objective o);

/// True if `a` is no worse than `b` on cost and error and strictly better on one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b, Objective o);

/// Non-dominated subset ordered by cost (stable for equal costs). Points
/// equal on both axes do not dominate each other and are all kept.
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points, Objective o);

nlohmann::json to_json(const ParetoPoint& p);
ParetoPoint pareto_point_from_json(const nlohmann::json& j);

void write_points_csv(std::span<const ParetoPoint> pts, const std::filesystem::path& path);
std::vector<ParetoPoint> read_points_csv(const std::filesystem::path& path);
void write_points_json(std::span<const ParetoPoint> pts, const std::filesystem::path& path);
void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path);
void write_metrics_csv(const MetricsReport& r, const std::filesystem::path& path);

/// Cost-vs-MAE scatter (log-scaled cost axis) with the front drawn as a step line.
void write_pareto_svg(std::span<const ParetoPoint> all, Objective o, const std::filesystem::path& path);

}  // namespace bpc
