// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace bpc {

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> val;  // carved out of the training subjects
  std::vector<std::string> test;
};

struct SplitDataset {
  std::vector<Fold> folds;

  nlohmann::json to_json() const;
  static SplitDataset from_json(const nlohmann::json& j);
};

/// Shuffles the subject ids under `seed` and partitions them into k
/// contiguous test folds whose sizes differ by at most one. Per fold,
/// `val_frac` of the remaining subjects (at least one when there are two or
/// more) form the validation set.
SplitDataset subject_kfold(std::vector<std::string> ids, int k, std::uint64_t seed, double val_frac = 0.2);

enum class FinetuneMode { Temporal, Shuffled };

struct FinetuneSplit {
  std::vector<int> train;  // indices into the subject's window list
  std::vector<int> eval;
};

/// Splits one subject's windows. The evaluation part is round(0.2 n)
/// windows: the last ones in temporal mode, a seeded random subset in
/// shuffled mode. With train_frac 0.8 the rest is the training set; with
/// 0.2 the training set is a disjoint subset as large as the evaluation
/// set, taken contiguously just before it (temporal) or at random.
FinetuneSplit finetune_split(int n_windows, FinetuneMode mode, double train_frac, std::uint64_t seed = 0);

FinetuneMode finetune_mode_from_name(const std::string& s);
const char* finetune_mode_name(FinetuneMode m);

}  // namespace bpc
