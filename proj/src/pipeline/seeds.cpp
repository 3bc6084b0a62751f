// SPDX-License-Identifier: Apache-2.0
#include "pipeline/seeds.hpp"

#include <random>

#include <fmt/format.h>

namespace bpc {

namespace {

ConvSpec conv(int in, int out, int k, int stride = 1) {
  ConvSpec s;
  s.in_ch = in;
  s.out_ch = out;
  s.kernel = k;
  s.stride = stride;
  s.pad = same_pad(k);
  return s;
}

// conv -> batch norm, optionally followed by ReLU; returns the last node.
int conv_bn(ModelGraph& g, std::mt19937_64& rng, const std::string& id, ConvSpec spec, int input, bool relu) {
  const int c = g.add(id, Conv1d::create(g.params, id, spec, rng), {input});
  int out = g.add(id + "_bn", Norm1d::create(g.params, id + "_bn", spec.out_ch), {c});
  if (relu) out = g.add(id + "_relu", ReLU{}, {out});
  return out;
}

void check(const SeedOptions& o) {
  if (o.width < 1 || o.stages < 1) throw Error("seed width and stage count must be positive");
  if (o.input_length < 1) throw Error("seed input length must be positive");
}

}  // namespace

std::string seed_task(const std::string& arch) {
  if (arch == "resnet1d") return "value";
  if (arch == "unet1d") return "signal";
  throw Error("unknown seed architecture '" + arch + "' (expected resnet1d or unet1d)");
}

ModelGraph build_resnet1d(const SeedOptions& o) {
  check(o);
  const int k = o.kernel > 0 ? o.kernel : 5;
  std::mt19937_64 rng(o.seed);
  ModelGraph g;
  g.input_shape = {1, o.input_length};
  int x = conv_bn(g, rng, "stem", conv(1, o.width, k), kGraphInput, true);
  int ch = o.width;
  for (int b = 0; b < o.stages; ++b) {
    const int out = o.width << b;
    const std::string p = fmt::format("b{}", b + 1);
    const int y1 = conv_bn(g, rng, p + "_c1", conv(ch, out, k, 2), x, true);
    const int y2 = conv_bn(g, rng, p + "_c2", conv(out, out, k), y1, false);
    const int sc = conv_bn(g, rng, p + "_sc", conv(ch, out, 1, 2), x, false);
    const int s = g.add(p + "_add", Add{}, {y2, sc});
    x = g.add(p + "_relu", ReLU{}, {s});
    ch = out;
  }
  const int len = g.infer_shapes().back().length;
  const int gap = g.add("gap", Pool1d(false, len, len), {x});
  g.add("head", Conv1d::create(g.params, "head", conv(ch, 2, 1), rng, true), {gap});
  g.meta["seed"] = "resnet1d";
  g.meta["task"] = "value";
  return g;
}

ModelGraph build_unet1d(const SeedOptions& o) {
  check(o);
  const int k = o.kernel > 0 ? o.kernel : 3;
  const int down = 1 << (o.stages - 1);
  if (o.input_length % down != 0)
    throw Error(fmt::format("unet1d with {} levels needs an input length divisible by {}, got {}", o.stages, down,
                            o.input_length));
  std::mt19937_64 rng(o.seed);
  ModelGraph g;
  g.input_shape = {1, o.input_length};
  std::vector<int> skips, widths;
  int x = kGraphInput, ch = 1;
  for (int l = 0; l < o.stages; ++l) {
    const int out = o.width << l;
    x = conv_bn(g, rng, fmt::format("enc{}", l + 1), conv(ch, out, k), x, true);
    ch = out;
    if (l + 1 < o.stages) {
      skips.push_back(x);
      widths.push_back(out);
      x = g.add(fmt::format("pool{}", l + 1), Pool1d(true, 2, 2), {x});
    }
  }
  for (int l = o.stages - 2; l >= 0; --l) {
    const int up = g.add(fmt::format("up{}", l + 1), Upsample(2), {x});
    const int cat = g.add(fmt::format("cat{}", l + 1), Concat{}, {up, skips[static_cast<std::size_t>(l)]});
    const int out = widths[static_cast<std::size_t>(l)];
    x = conv_bn(g, rng, fmt::format("dec{}", l + 1), conv(ch + out, out, k), cat, true);
    ch = out;
  }
  g.add("head", Conv1d::create(g.params, "head", conv(ch, 1, 1), rng), {x});
  g.meta["seed"] = "unet1d";
  g.meta["task"] = "signal";
  return g;
}

ModelGraph build_seed(const SeedOptions& o) {
  seed_task(o.arch);
  return o.arch == "resnet1d" ? build_resnet1d(o) : build_unet1d(o);
}

}  // namespace bpc
