// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/graph.hpp"

namespace bpc {

/// Differentiable cost term R(theta). `value` evaluates it; `backward`
/// adds scale * dR/dtheta to the architecture gradients.
struct Regularizer {
  std::function<double(const ModelGraph&, double tau)> value;
  std::function<void(ModelGraph&, double scale, double tau)> backward;
  explicit operator bool() const { return static_cast<bool>(value); }
};

struct PhaseConfig {
  std::string name;
  int epochs = 0;
  int patience = 40;  // epochs without improvement before stopping; <= 0 disables
  bool update_w = true;
  bool update_theta = false;
  double lambda = 0.0;
  /// Model selection on val MSE + lambda*R instead of val MSE alone.
  bool select_on_total = false;
  /// Softmax temperature per epoch of this phase (defaults to 1).
  std::function<double(int)> tau;
};

struct TrainConfig {
  double lr_w = 1e-3;
  double lr_theta = 1e-2;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Theta steps on validation batches, interleaved per batch with weight
  /// steps on training batches. When false both step on the training batch.
  bool alternate = true;
};

struct EpochRecord {
  std::string phase;
  int epoch = 0;
  double task_loss = 0.0;
  double reg_value = 0.0;  // lambda * R
  double val_mse = 0.0;
  double expected_cost = 0.0;  // R
  double tau = 1.0;
};

struct TrainLog {
  std::vector<EpochRecord> rows;
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& p) const;
};

struct PhaseResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_score = 0.0;
  bool stopped_early = false;
};

/// One training phase with early stopping; the best checkpoint is restored on return.
PhaseResult train_phase(ModelGraph& g, const Dataset& train, const Dataset& val, const PhaseConfig& phase,
                        const TrainConfig& cfg, const Regularizer& reg, TrainLog& log);

Tensor predict(ModelGraph& g, const Tensor& x, const RunOptions& opts, int batch = 64);
double evaluate_mse(ModelGraph& g, const Dataset& d, const RunOptions& opts, int batch = 64);

/// Number of whole epochs after the best one that early stopping tolerates.
inline bool should_stop(int epoch, int best_epoch, int patience) {
  return patience > 0 && best_epoch >= 0 && epoch - best_epoch >= patience;
}

}  // namespace bpc
