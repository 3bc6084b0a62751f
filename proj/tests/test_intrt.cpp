// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "intrt/int_runtime.hpp"
#include "intrt/packing.hpp"
#include "mps/mps.hpp"

using namespace bpc;

TEST(Packing, TwoBitLayout) {
  const std::vector<std::uint32_t> c{3, 0, 1, 2};
  const auto pw = pack(c, 2);
  ASSERT_EQ(pw.bytes.size(), 1u);
  EXPECT_EQ(pw.bytes[0], 0x93);
}

TEST(Packing, FourBitLayout) {
  const std::vector<std::uint32_t> c{0xA, 0x5};
  EXPECT_EQ(pack(c, 4).bytes, (std::vector<std::uint8_t>{0x5A}));
}

TEST(Packing, EightBitIsBytewise) {
  const std::vector<std::uint32_t> c{0, 17, 255, 128};
  EXPECT_EQ(pack(c, 8).bytes, (std::vector<std::uint8_t>{0, 17, 255, 128}));
}

TEST(Packing, RoundTripRandom) {
  std::mt19937_64 rng(1);
  int cases = 0;
  for (int bits : {2, 4, 8}) {
    std::uniform_int_distribution<std::uint32_t> code(0, (1u << bits) - 1);
    std::uniform_int_distribution<int> len(0, 37);
    for (int t = 0; t < 4000; ++t, ++cases) {
      std::vector<std::uint32_t> c(static_cast<std::size_t>(len(rng)));
      for (auto& v : c) v = code(rng);
      const auto pw = pack(c, bits);
      ASSERT_EQ(pw.bytes.size(), (c.size() * static_cast<std::size_t>(bits) + 7) / 8);
      ASSERT_EQ(unpack(pw), c);
    }
  }
  EXPECT_GE(cases, 10000);
}

TEST(Packing, EdgeCases) {
  EXPECT_TRUE(unpack(std::vector<std::uint8_t>{}, 4, 0).empty());
  const std::vector<std::uint32_t> too_big{4};
  EXPECT_THROW(pack(too_big, 2), Error);
  EXPECT_THROW(pack(too_big, 3), Error);
  EXPECT_THROW(unpack(std::vector<std::uint8_t>{0xFF}, 4, 3), Error);
  // Three 2-bit codes leave two padding bits; whatever they hold is ignored.
  EXPECT_EQ(unpack(std::vector<std::uint8_t>{0xE4}, 2, 3), (std::vector<std::uint32_t>{0, 1, 2}));
}

namespace {

// input quantizer (alpha 1) -> conv 1->2 k1 (weights {0.5, -1}) -> quantizer (alpha 1)
ModelGraph tiny(bool bias) {
  ModelGraph g;
  g.input_shape = {1, 3};
  const int w = g.params.add("c.weight", Tensor({2, 1, 1}, {0.5, -1.0}), ParamRole::Weight);
  const int b = bias ? g.params.add("c.bias", Tensor({2}, {0.0, 0.0}), ParamRole::Weight) : -1;
  const int a0 = g.params.add("in.alpha", Tensor({1}, 1.0), ParamRole::Weight);
  const int a1 = g.params.add("out.alpha", Tensor({1}, 1.0), ParamRole::Weight);
  const int q = g.add("in", ActQuant(a0), {kGraphInput});
  const int c = g.add("c", Conv1d(ConvSpec{1, 2, 1, 1, 1, 1, 0, bias}, w, b), {q});
  g.add("out", ActQuant(a1), {c});
  attach_bit_search(g, {8});
  return g;
}

}  // namespace

TEST(IntForward, ZeroInputZeroBiasGivesZero) {
  const QuantizedModel m = export_quantized(tiny(true));
  const Tensor y = int_predict(m, Tensor({2, 1, 3}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(IntForward, HandRequantization) {
  const QuantizedModel m = export_quantized(tiny(false));
  EXPECT_EQ(m.layers[0].scale_out, 1.0 / 128);
  const Tensor y = int_predict(m, Tensor({1, 1, 3}, 0.5));
  // 0.5 * 0.5 = 0.25, i.e. code 32 at step 1/128.
  EXPECT_EQ(y[0], 32.0 / 128);
  EXPECT_EQ(y[3], -64.0 / 128);
}

TEST(IntForward, ScaleMismatchIsRejected) {
  const QuantizedModel m = export_quantized(tiny(true));
  IntTensor x = quantize_input(m, Tensor({1, 1, 3}, 0.25));
  ModelGraph g = tiny(true);
  QuantizedModel broken = m;
  broken.layers[0].scale_x *= 2;
  EXPECT_THROW(int_forward(broken, x), Error);
}

TEST(IntForward, DeterministicAndPure) {
  const QuantizedModel m = export_quantized(tiny(true));
  const Tensor x({4, 1, 3}, {0.1, -0.7, 0.33, 0.9, 1.4, -2, 0, 0.01, 0.5, 0.5, -0.5, 0.25});
  const Tensor a = int_predict(m, x), b = int_predict(m, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Footprint, MatchesBlobSizes) {
  ModelGraph g;
  g.input_shape = {3, 8};
  std::mt19937_64 rng(2);
  const int c1 = g.add("c1", Conv1d::create(g.params, "c1", ConvSpec{3, 5, 3, 1, 1, 1, 1, true}, rng), {kGraphInput});
  g.add("c2", Conv1d::create(g.params, "c2", ConvSpec{5, 2, 1}, rng), {c1});
  ModelGraph q = prepare_for_quant(g);
  attach_bit_search(q, {2, 4, 8});
  q.params.value(q.params.require("c1.bits_theta"))[0] = 1.0;  // c1 -> 2 bits (45 weights)
  q.params.value(q.params.require("c2.bits_theta"))[1] = 1.0;  // c2 -> 4 bits (10 weights)
  freeze_precision(q);
  const QuantizedModel m = export_quantized(q);
  const Footprint f = m.footprint();
  EXPECT_EQ(f.weight_bytes, m.weights.size());
  EXPECT_EQ(f.weight_bytes, (45u * 2 + 7) / 8 + (10u * 4 + 7) / 8);
  EXPECT_EQ(f.bias_bytes, 4 * m.biases.size());
  EXPECT_EQ(m.biases.size(), 7u);
  EXPECT_EQ(f.total(), f.weight_bytes + f.bias_bytes + 2 * 16);
}
