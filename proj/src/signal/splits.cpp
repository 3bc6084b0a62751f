// SPDX-License-Identifier: Apache-2.0
#include "signal/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "core/tensor.hpp"

namespace bpc {

nlohmann::json SplitDataset::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t f = 0; f < folds.size(); ++f)
    j[std::to_string(f)] = {{"train", folds[f].train}, {"val", folds[f].val}, {"test", folds[f].test}};
  return j;
}

SplitDataset SplitDataset::from_json(const nlohmann::json& j) {
  SplitDataset s;
  s.folds.resize(j.size());
  for (const auto& [key, v] : j.items()) {
    const auto f = static_cast<std::size_t>(std::stoul(key));
    if (f >= s.folds.size()) throw Error("split manifest: fold keys must be 0..k-1");
    s.folds[f].train = v.at("train").get<std::vector<std::string>>();
    s.folds[f].test = v.at("test").get<std::vector<std::string>>();
    if (v.contains("val")) s.folds[f].val = v.at("val").get<std::vector<std::string>>();
  }
  return s;
}

SplitDataset subject_kfold(std::vector<std::string> ids, int k, std::uint64_t seed, double val_frac) {
  if (k < 2) throw Error("subject_kfold: k must be at least 2");
  if (static_cast<int>(ids.size()) < k)
    throw Error("subject_kfold: " + std::to_string(ids.size()) + " subjects cannot fill " + std::to_string(k) + " folds");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    throw Error("subject_kfold: duplicate subject id");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const int n = static_cast<int>(ids.size());
  SplitDataset out;
  for (int f = 0; f < k; ++f) {
    const int b = f * n / k, e = (f + 1) * n / k;
    Fold fold;
    std::vector<std::string> rest;
    for (int i = 0; i < n; ++i) (i >= b && i < e ? fold.test : rest).push_back(ids[static_cast<std::size_t>(i)]);
    int n_val = static_cast<int>(std::lround(val_frac * static_cast<double>(rest.size())));
    if (val_frac > 0.0 && rest.size() >= 2) n_val = std::max(n_val, 1);
    n_val = std::min<int>(n_val, static_cast<int>(rest.size()) - 1);
    std::shuffle(rest.begin(), rest.end(), rng);
    fold.val.assign(rest.begin(), rest.begin() + n_val);
    fold.train.assign(rest.begin() + n_val, rest.end());
    out.folds.push_back(std::move(fold));
  }
  return out;
}

FinetuneSplit finetune_split(int n, FinetuneMode mode, double train_frac, std::uint64_t seed) {
  if (n < 5) throw Error("finetune_split: need at least 5 windows, got " + std::to_string(n));
  const bool small = std::abs(train_frac - 0.2) < 1e-9;
  if (!small && std::abs(train_frac - 0.8) > 1e-9) throw Error("finetune_split: train_frac must be 0.8 or 0.2");
  const int n_eval = static_cast<int>(std::lround(0.2 * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (mode == FinetuneMode::Shuffled) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  // The evaluation part is the tail of `order`; training is taken from just before it.
  FinetuneSplit s;
  s.eval.assign(order.end() - n_eval, order.end());
  const int n_train = small ? n_eval : n - n_eval;
  s.train.assign(order.end() - n_eval - n_train, order.end() - n_eval);
  std::sort(s.eval.begin(), s.eval.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

FinetuneMode finetune_mode_from_name(const std::string& s) {
  if (s == "temporal") return FinetuneMode::Temporal;
  if (s == "shuffled") return FinetuneMode::Shuffled;
  throw Error("unknown fine-tuning mode '" + s + "' (expected temporal or shuffled)");
}

const char* finetune_mode_name(FinetuneMode m) { return m == FinetuneMode::Temporal ? "temporal" : "shuffled"; }

}  // namespace bpc
