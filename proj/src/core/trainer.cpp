// SPDX-License-Identifier: Apache-2.0
#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "core/optim.hpp"
#include "core/serialize.hpp"

namespace bpc {

std::string TrainLog::to_csv() const {
  std::string s = "phase,epoch,task_loss,reg_value,val_mse,expected_cost,tau\n";
  for (const auto& r : rows)
    s += fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", r.phase, r.epoch, r.task_loss, r.reg_value,
                     r.val_mse, r.expected_cost, r.tau);
  return s;
}

void TrainLog::write_csv(const std::filesystem::path& p) const { write_file(p, to_csv()); }

namespace {

double mse_and_grad(const Tensor& y, const Tensor& t, Tensor* dy) {
  if (y.shape() != t.shape())
    throw Error("prediction " + shape_str(y.shape()) + " and target " + shape_str(t.shape()) + " disagree");
  double s = 0.0;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - t[i];
    s += d * d;
    if (dy) (*dy)[i] = 2.0 * d / n;
  }
  return s / n;
}

std::vector<int> indices_of(const std::vector<int>& order, int begin, int end) {
  return {order.begin() + begin, order.begin() + end};
}

}  // namespace

Tensor predict(ModelGraph& g, const Tensor& x, const RunOptions& opts, int batch) {
  const int n = x.dim(0);
  Tensor out;
  std::vector<int> idx;
  for (int b = 0; b < n; b += batch) {
    idx.resize(static_cast<std::size_t>(std::min(batch, n - b)));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor y = g.forward(gather_rows(x, idx), opts);
    if (out.empty()) out = Tensor({n, y.dim(1), y.dim(2)});
    std::copy(y.data().begin(), y.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(b) * y.dim(1) * y.dim(2)));
  }
  return out;
}

double evaluate_mse(ModelGraph& g, const Dataset& d, const RunOptions& opts, int batch) {
  if (d.size() == 0) throw Error("cannot evaluate on an empty split");
  return mse_and_grad(predict(g, d.x, opts, batch), d.y, nullptr);
}

PhaseResult train_phase(ModelGraph& g, const Dataset& train, const Dataset& val, const PhaseConfig& phase,
                        const TrainConfig& cfg, const Regularizer& reg, TrainLog& log) {
  PhaseResult res;
  if (phase.epochs <= 0) return res;
  if (train.size() == 0) throw Error("phase '" + phase.name + "': empty training split");
  if (val.size() == 0) throw Error("phase '" + phase.name + "': empty validation split");
  if (phase.update_theta && !reg && phase.lambda != 0.0) throw Error("theta updates need a cost regularizer");

  Adam opt_w(g.params.indices(ParamRole::Weight), AdamConfig{cfg.lr_w});
  Adam opt_t(g.params.indices(ParamRole::Arch), AdamConfig{cfg.lr_theta});
  std::mt19937_64 rng(cfg.seed ^ std::hash<std::string>{}(phase.name));

  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> vorder(static_cast<std::size_t>(val.size()));
  std::iota(vorder.begin(), vorder.end(), 0);
  std::size_t vcursor = vorder.size();

  ParamStore best = g.params;
  double best_score = INFINITY;
  RunOptions eval_opts;
  eval_opts.training = false;

  for (int epoch = 0; epoch < phase.epochs; ++epoch) {
    RunOptions opts;
    opts.training = true;
    opts.tau = phase.tau ? phase.tau(epoch) : 1.0;
    eval_opts.tau = opts.tau;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (int b = 0; b < train.size(); b += cfg.batch_size) {
      const auto idx = indices_of(order, b, std::min(train.size(), b + cfg.batch_size));
      const Tensor xb = train.batch_x(idx), yb = train.batch_y(idx);
      if (phase.update_w) {
        g.params.zero_grad();
        const Tensor y = g.forward(xb, opts);
        Tensor dy(y.shape());
        const double l = mse_and_grad(y, yb, &dy);
        if (!std::isfinite(l)) throw Error(fmt::format("phase '{}' epoch {}: non-finite loss", phase.name, epoch));
        loss_sum += l;
        ++batches;
        g.backward(dy, opts);
        if (phase.update_theta && !cfg.alternate && reg) reg.backward(g, phase.lambda, opts.tau);
        opt_w.step(g.params);
        if (phase.update_theta && !cfg.alternate) opt_t.step(g.params);
      }
      if (phase.update_theta && (cfg.alternate || !phase.update_w)) {
        if (vcursor + 1 > vorder.size()) {
          std::shuffle(vorder.begin(), vorder.end(), rng);
          vcursor = 0;
        }
        const int take = std::min<int>(cfg.batch_size, static_cast<int>(vorder.size() - vcursor));
        const auto vidx = indices_of(vorder, static_cast<int>(vcursor), static_cast<int>(vcursor) + take);
        vcursor += static_cast<std::size_t>(take);
        g.params.zero_grad();
        const Tensor y = g.forward(val.batch_x(vidx), opts);
        Tensor dy(y.shape());
        const double l = mse_and_grad(y, val.batch_y(vidx), &dy);
        if (!std::isfinite(l)) throw Error(fmt::format("phase '{}' epoch {}: non-finite loss", phase.name, epoch));
        if (!phase.update_w) {
          loss_sum += l;
          ++batches;
        }
        g.backward(dy, opts);
        if (reg) reg.backward(g, phase.lambda, opts.tau);
        opt_t.step(g.params);
      }
    }

    EpochRecord rec;
    rec.phase = phase.name;
    rec.epoch = epoch;
    rec.task_loss = batches ? loss_sum / batches : 0.0;
    rec.val_mse = evaluate_mse(g, val, eval_opts, std::max(cfg.batch_size, 64));
    if (!std::isfinite(rec.val_mse))
      throw Error(fmt::format("phase '{}' epoch {}: non-finite validation loss", phase.name, epoch));
    rec.expected_cost = reg ? reg.value(g, opts.tau) : 0.0;
    rec.reg_value = phase.lambda * rec.expected_cost;
    rec.tau = opts.tau;
    log.rows.push_back(rec);
    ++res.epochs_run;

    const double score = rec.val_mse + (phase.select_on_total ? rec.reg_value : 0.0);
    if (score < best_score) {
      best_score = score;
      res.best_epoch = epoch;
      best = g.params;
    } else if (should_stop(epoch, res.best_epoch, phase.patience)) {
      res.stopped_early = true;
      break;
    }
  }
  g.params = std::move(best);
  res.best_score = best_score;
  return res;
}

}  // namespace bpc
