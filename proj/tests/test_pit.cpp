// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "core/gradcheck.hpp"
#include "pit/pit.hpp"
#include "test_util.hpp"

using namespace bpc;
using bpc::testing::eval_opts;
using bpc::testing::max_abs_diff;
using bpc::testing::random_tensor;

namespace {

ConvSpec same(int in, int out, int k, int groups = 1) { return ConvSpec{in, out, k, 1, 1, groups, (k - 1) / 2, true}; }

// a(4->8, k3) -> relu -> b(8->2, k1) head
ModelGraph chain(std::uint64_t seed = 1) {
  ModelGraph g;
  g.input_shape = {4, 10};
  std::mt19937_64 rng(seed);
  const int a = g.add("a", Conv1d::create(g.params, "a", same(4, 8, 3), rng), {kGraphInput});
  const int r = g.add("r", ReLU{}, {a});
  g.add("b", Conv1d::create(g.params, "b", same(8, 2, 1), rng), {r});
  return g;
}

// Exercises every propagation rule: norms, PReLU, depthwise, residual add,
// grouped conv, pooling, concat, instance norm and upsampling.
ModelGraph rich(std::uint64_t seed) {
  ModelGraph g;
  g.input_shape = {3, 16};
  std::mt19937_64 rng(seed);
  auto randomize = [&](const std::string& name, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : g.params.value(g.params.require(name)).data()) v = u(rng);
  };
  const int a = g.add("a", Conv1d::create(g.params, "a", same(3, 8, 5), rng), {kGraphInput});
  const int an = g.add("an", Norm1d::create(g.params, "an", 8), {a});
  randomize("an.gamma", 0.5, 1.5);
  randomize("an.beta", -0.5, 0.5);
  randomize("an.running_mean", -0.2, 0.2);
  randomize("an.running_var", 0.5, 2.0);
  const int ap = g.add("ap", PReLU::create(g.params, "ap", 8), {an});
  ConvSpec dws = same(8, 8, 3, 8);
  const int d = g.add("d", Conv1d::create(g.params, "d", dws, rng), {ap});
  const int b = g.add("b", Conv1d::create(g.params, "b", same(8, 8, 3), rng), {d});
  const int s = g.add("s", Add{}, {ap, b});
  const int r = g.add("r", ReLU{}, {s});
  const int gc = g.add("g", Conv1d::create(g.params, "g", same(8, 8, 3, 2), rng), {r});
  const int mp = g.add("mp", Pool1d(true, 2, 2), {gc});
  const int c = g.add("c", Conv1d::create(g.params, "c", same(8, 4, 1), rng), {mp});
  const int cat = g.add("cat", Concat{}, {mp, c});
  const int in = g.add("in", Norm1d::create(g.params, "in", 12, true), {cat});
  randomize("in.running_mean", -0.2, 0.2);
  randomize("in.running_var", 0.5, 2.0);
  const int up = g.add("up", Upsample(2), {in});
  g.add("head", Conv1d::create(g.params, "head", same(12, 2, 1), rng), {up});
  return g;
}

Tensor& mask(ModelGraph& g, const std::string& owner) { return g.params.value(g.params.require("mask:" + owner)); }

void random_binary_masks(ModelGraph& g, std::mt19937_64& rng, double p_off) {
  std::bernoulli_distribution off(p_off);
  for (int idx : mask_params(g))
    for (double& v : g.params.value(idx).data()) v = off(rng) ? -1.0 : 1.0;
  clamp_masks(g);
}

}  // namespace

TEST(AttachMasks, DenseConvGetsOneSlotPerChannel) {
  ModelGraph g = chain();
  attach_masks(g);
  EXPECT_EQ(mask(g, "a").size(), 8u);
  for (double v : mask(g, "a").data()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(g.params.at(g.params.require("mask:a")).role, ParamRole::Arch);
}

TEST(AttachMasks, OutputHeadHasNoMask) {
  ModelGraph g = chain();
  attach_masks(g);
  EXPECT_LT(g.params.find("mask:b"), 0);
  EXPECT_EQ(mask_params(g).size(), 1u);
}

TEST(AttachMasks, GroupedConvSharesSlotsAcrossGroups) {
  ModelGraph g = rich(1);
  attach_masks(g);
  EXPECT_EQ(mask(g, "g").size(), 4u);
  const auto gates = channel_gates(g);
  const auto& gg = gates[static_cast<std::size_t>(g.find("g"))];
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(gg[static_cast<std::size_t>(c)].slot, c);
    EXPECT_EQ(gg[static_cast<std::size_t>(c + 4)].slot, c);
  }
}

TEST(AttachMasks, ResidualBranchesShareOneMask) {
  ModelGraph g = rich(1);
  attach_masks(g);
  EXPECT_GE(g.params.find("mask:a"), 0);
  EXPECT_LT(g.params.find("mask:b"), 0);
  // The residual add feeds a grouped conv with 4 channels per group, so the shared mask has period 4.
  EXPECT_EQ(mask(g, "a").size(), 4u);
}

TEST(AttachMasks, TwiceIsAnError) {
  ModelGraph g = chain();
  attach_masks(g);
  EXPECT_THROW(attach_masks(g), Error);
}

TEST(AttachMasks, ChoiceLayerIsRejectedByName) {
  ModelGraph g;
  g.input_shape = {2, 4};
  const int t = g.params.add("x.theta", Tensor({2}, 1.0), ParamRole::Arch);
  const int x = g.add("x", Choice(t, {Alternative{"ID", {}}, Alternative{"ID2", {}}}), {kGraphInput});
  g.add("id", Identity{}, {x});
  try {
    attach_masks(g);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos) << e.what();
  }
}

TEST(MaskedForward, AllKeepMatchesUnmaskedExactly) {
  ModelGraph plain = rich(2);
  ModelGraph masked = plain;
  attach_masks(masked);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 3, 16}, rng);
  EXPECT_EQ(max_abs_diff(plain.forward(x, eval_opts()), masked.forward(x, eval_opts())), 0.0);
}

TEST(MaskedForward, NegativeThetaZeroesChannel) {
  ModelGraph g = chain();
  attach_masks(g);
  mask(g, "a")[3] = -1.0;
  std::mt19937_64 rng(4);
  g.forward(random_tensor({2, 4, 10}, rng), eval_opts());
  const Tensor& a = g.activation(g.find("r"));
  for (int n = 0; n < 2; ++n)
    for (int l = 0; l < 10; ++l) EXPECT_EQ(a.at(n, 3, l), 0.0);
}

TEST(MaskedForward, HeavisideAtZeroKeeps) {
  EXPECT_EQ(heaviside(0.0), 1.0);
  EXPECT_EQ(heaviside(-1e-300), 0.0);
  EXPECT_EQ(ste_grad(1.0), 1.0);
  EXPECT_EQ(ste_grad(-1.0), 1.0);
  EXPECT_EQ(ste_grad(1.5), 0.0);
}

TEST(MaskedForward, SteGradientEqualsGateSensitivity) {
  // d loss / d theta_c must equal d loss / d m_c at m = H(theta) = 1. The
  // oracle scales channel c of the producing conv by (1 +- eps).
  ModelGraph g = chain(5);
  attach_masks(g);
  std::mt19937_64 rng(6);
  for (double& v : mask(g, "a").data()) v = 0.5;
  const Tensor x = random_tensor({3, 4, 10}, rng);
  const Tensor r = random_tensor({3, 2, 10}, rng);
  auto loss = [&] {
    const Tensor y = g.forward(x, eval_opts());
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  g.params.zero_grad();
  loss();
  g.backward(r, eval_opts());
  const int mi = g.params.require("mask:a");
  const int wi = g.params.require("a.weight"), bi = g.params.require("a.bias");
  for (int c = 0; c < 8; ++c) {
    const double analytic = g.params.value(mi).grad()[static_cast<std::size_t>(c)];
    auto scale = [&](double f) {
      for (int i = 0; i < 4 * 3; ++i) g.params.value(wi)[static_cast<std::size_t>(c * 12 + i)] *= f;
      g.params.value(bi)[static_cast<std::size_t>(c)] *= f;
    };
    const double eps = 1e-6;
    const ModelGraph saved = g;
    scale(1 + eps);
    const double up = loss();
    g = saved;
    scale(1 - eps);
    const double down = loss();
    g = saved;
    EXPECT_LT(grad_rel_error(analytic, (up - down) / (2 * eps)), 1e-6) << c;
  }
}

TEST(MaskedForward, SurrogateGradientsMatchFiniteDifferences) {
  ModelGraph g = rich(7);
  attach_masks(g);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.2, 0.9);
  std::bernoulli_distribution neg(0.3);
  for (int idx : mask_params(g))
    for (double& v : g.params.value(idx).data()) v = (neg(rng) ? -1 : 1) * u(rng);
  RunOptions o = eval_opts();
  o.surrogate.mask = true;
  GradCheckOptions gc;
  gc.roles = {ParamRole::Arch};
  gc.check_input = false;
  const auto rep = grad_check(g, random_tensor({2, 3, 16}, rng), o, gc);
  EXPECT_GT(rep.checked, 0u);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
}

TEST(MaskCost, AllKeepIsOriginalCount) {
  ModelGraph g = rich(1);
  const double n = static_cast<double>(g.param_count());
  attach_masks(g);
  EXPECT_EQ(mask_cost(g), n);
}

TEST(MaskCost, HalvedProducerHalvesItsCountsAndConsumerInput) {
  ModelGraph g = chain();
  attach_masks(g);
  for (int c = 0; c < 4; ++c) mask(g, "a")[static_cast<std::size_t>(c)] = -1.0;
  // a: 4 in * 4 out * 3 + 4 bias; b: 4 in * 2 out + 2 bias.
  EXPECT_EQ(mask_cost(g), 4.0 * 4 * 3 + 4 + 4 * 2 + 2);
  const ModelGraph e = export_pruned(g);
  EXPECT_EQ(static_cast<double>(e.param_count()), mask_cost(g));
}

TEST(MaskCost, GradientMatchesChainRuleOracle) {
  ModelGraph g = chain();
  attach_masks(g);
  mask(g, "a")[1] = -0.5;
  mask(g, "a")[2] = 3.0;  // outside the straight-through window
  g.params.zero_grad();
  mask_cost_backward(g, 2.0);
  const auto& grad = g.params.value(g.params.require("mask:a")).grad();
  // d cost / d m_c = 4*3 + 1 (a's row and bias) + 2 (b's column); STE is 1 on [-1, 1].
  for (int c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(grad[static_cast<std::size_t>(c)], c == 2 ? 0.0 : 2.0 * 15);
}

TEST(MaskCost, MonotoneInEachGate) {
  ModelGraph g = rich(3);
  attach_masks(g);
  std::mt19937_64 rng(9);
  random_binary_masks(g, rng, 0.4);
  g.params.zero_grad();
  mask_cost_backward(g, 1.0);
  for (int idx : mask_params(g)) {
    for (double d : g.params.value(idx).grad()) EXPECT_GE(d, 0.0);
    for (std::size_t s = 0; s < g.params.value(idx).size(); ++s) {
      const double before = mask_cost(g);
      double& t = g.params.value(idx)[s];
      const double old = t;
      t = 1.0;
      EXPECT_GE(mask_cost(g), before);
      t = old;
    }
  }
}

TEST(Clamp, FullyPrunedMaskKeepsLargestSlot) {
  ModelGraph g = chain();
  attach_masks(g);
  auto& m = mask(g, "a");
  for (std::size_t c = 0; c < m.size(); ++c) m[c] = -2.0 + 0.1 * static_cast<double>(c);
  EXPECT_EQ(clamp_masks(g), 1);
  EXPECT_EQ(m[7], 0.5);
  EXPECT_EQ(clamp_masks(g), 0);
  const auto sum = summarize_masks(g);
  ASSERT_EQ(sum.size(), 2u);
  EXPECT_EQ(sum[0].kept, 1);
}

TEST(Export, NoPruningIsIsomorphic) {
  ModelGraph plain = rich(4);
  ModelGraph masked = plain;
  attach_masks(masked);
  const ModelGraph e = export_pruned(masked);
  ASSERT_EQ(e.size(), plain.size());
  ASSERT_EQ(e.params.size(), plain.params.size());
  for (int i = 0; i < plain.params.size(); ++i) {
    const int j = e.params.require(plain.params.at(i).name);
    EXPECT_EQ(max_abs_diff(e.params.value(j), plain.params.value(i)), 0.0);
  }
}

TEST(Export, SingleChannelSlicesProducerAndConsumer) {
  ModelGraph g = chain();
  attach_masks(g);
  mask(g, "a")[5] = -1.0;
  const ModelGraph e = export_pruned(g);
  const auto& a = static_cast<const Conv1d&>(*e.node(e.find("a")).layer);
  const auto& b = static_cast<const Conv1d&>(*e.node(e.find("b")).layer);
  EXPECT_EQ(a.spec().out_ch, 7);
  EXPECT_EQ(b.spec().in_ch, 7);
  EXPECT_TRUE(mask_params(e).empty());
}

TEST(Export, GroupedConvLosesOneChannelPerGroup) {
  ModelGraph g = rich(5);
  attach_masks(g);
  mask(g, "g")[1] = -1.0;
  const ModelGraph e = export_pruned(g);
  const auto& gc = static_cast<const Conv1d&>(*e.node(e.find("g")).layer);
  EXPECT_EQ(gc.spec().out_ch, 6);
  EXPECT_EQ(gc.spec().groups, 2);
  const auto& c = static_cast<const Conv1d&>(*e.node(e.find("c")).layer);
  EXPECT_EQ(c.spec().in_ch, 6);
}

TEST(Export, MaskedAndExportedAgreeExactlyAndCostIsParameterCount) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    ModelGraph g = rich(100 + trial);
    attach_masks(g);
    random_binary_masks(g, rng, 0.1 + 0.03 * trial);
    ModelGraph e = export_pruned(g);
    EXPECT_EQ(mask_cost(g), static_cast<double>(e.param_count())) << trial;
    for (int rep = 0; rep < 4; ++rep) {
      const Tensor x = random_tensor({1, 3, 16}, rng, -3.0, 3.0);
      EXPECT_EQ(max_abs_diff(g.forward(x, eval_opts()), e.forward(x, eval_opts())), 0.0) << trial;
    }
    // Every grouped conv keeps the same channel count per group.
    const auto& gc = static_cast<const Conv1d&>(*e.node(e.find("g")).layer);
    EXPECT_EQ(gc.spec().out_ch % gc.spec().groups, 0);
  }
}
