// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "core/trainer.hpp"
#include "test_util.hpp"

using namespace bpc;

namespace {

// y = 2 x0 - x1 + 0.5 through a single linear layer.
Dataset linear_problem(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.x = bpc::testing::random_tensor({n, 2, 1}, rng);
  d.y = Tensor({n, 1, 1});
  for (int i = 0; i < n; ++i) {
    d.y[static_cast<std::size_t>(i)] = 2.0 * d.x[static_cast<std::size_t>(2 * i)] - d.x[static_cast<std::size_t>(2 * i + 1)] + 0.5;
    d.subject.push_back("s" + std::to_string(i % 4));
  }
  return d;
}

ModelGraph linear_model() {
  ModelGraph g;
  g.input_shape = {2, 1};
  std::mt19937_64 rng(1);
  g.add("fc", Conv1d::create(g.params, "fc", ConvSpec{2, 1, 1, 1, 1, 1, 0, true}, rng, true), {-1});
  g.infer_shapes();
  return g;
}

}  // namespace

TEST(Trainer, ShouldStopHonoursPatience) {
  EXPECT_FALSE(should_stop(5, 2, 4));
  EXPECT_TRUE(should_stop(6, 2, 4));
  EXPECT_FALSE(should_stop(100, 2, 0));
  EXPECT_FALSE(should_stop(3, -1, 1));
}

TEST(Trainer, FitsLinearProblemAndLogsEveryEpoch) {
  const auto train = linear_problem(256, 2), val = linear_problem(64, 3);
  auto g = linear_model();
  const double before = evaluate_mse(g, val, bpc::testing::eval_opts());
  PhaseConfig p;
  p.name = "fit";
  p.epochs = 150;
  p.patience = 0;
  TrainConfig tc;
  tc.lr_w = 0.05;
  TrainLog log;
  const auto r = train_phase(g, train, val, p, tc, {}, log);
  EXPECT_EQ(r.epochs_run, 150);
  EXPECT_EQ(log.rows.size(), 150u);
  const double after = evaluate_mse(g, val, bpc::testing::eval_opts());
  EXPECT_LT(after, 1e-3);
  EXPECT_LT(after, before);
  EXPECT_NE(log.to_csv().find("fit"), std::string::npos);
}

TEST(Trainer, SameSeedSameWeights) {
  const auto train = linear_problem(64, 2), val = linear_problem(16, 3);
  auto run = [&] {
    auto g = linear_model();
    PhaseConfig p;
    p.epochs = 5;
    TrainConfig tc;
    tc.seed = 9;
    TrainLog log;
    train_phase(g, train, val, p, tc, {}, log);
    return predict(g, val.x, bpc::testing::eval_opts());
  };
  EXPECT_EQ(bpc::testing::max_abs_diff(run(), run()), 0.0);
}

TEST(Trainer, BestCheckpointIsRestored) {
  const auto train = linear_problem(64, 2), val = linear_problem(16, 3);
  auto g = linear_model();
  PhaseConfig p;
  p.epochs = 40;
  p.patience = 3;
  TrainConfig tc;
  tc.lr_w = 5.0;  // diverges after the first steps
  TrainLog log;
  const auto r = train_phase(g, train, val, p, tc, {}, log);
  EXPECT_LE(r.epochs_run, 40);
  EXPECT_NEAR(evaluate_mse(g, val, bpc::testing::eval_opts()), r.best_score, 1e-9);
}
