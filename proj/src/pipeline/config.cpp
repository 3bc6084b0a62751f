// SPDX-License-Identifier: Apache-2.0
#include "pipeline/config.hpp"

#include <cmath>
#include <fstream>

#include "core/serialize.hpp"

namespace bpc {

using nlohmann::json;

std::vector<double> log_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo > 0.0) || !(hi >= lo)) throw Error("log_grid needs n >= 1 and 0 < lo <= hi");
  std::vector<double> out;
  if (n == 1) return {lo};
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < n; ++i) out.push_back(std::pow(10.0, a + (b - a) * i / (n - 1)));
  out.front() = lo;
  out.back() = hi;
  return out;
}

json ExperimentConfig::to_json() const {
  return {
      {"seed_arch",
       {{"arch", seed_arch.arch},
        {"width", seed_arch.width},
        {"stages", seed_arch.stages},
        {"kernel", seed_arch.kernel},
        {"seed", seed_arch.seed}}},
      {"data",
       {{"source", data.source},
        {"csv_dir", data.csv_dir},
        {"n_subjects", data.n_subjects},
        {"seconds", data.seconds},
        {"offset_std", data.offset_std},
        {"seed", data.seed},
        {"decimate", data.decimate}}},
      {"train",
       {{"warmup_epochs", train.warmup_epochs},
        {"search_epochs", train.search_epochs},
        {"finetune_epochs", train.finetune_epochs},
        {"patience", train.patience},
        {"lr_w", train.lr_w},
        {"lr_theta", train.lr_theta},
        {"batch_size", train.batch_size},
        {"alternate", train.alternate}}},
      {"finetune",
       {{"mode", finetune.mode}, {"train_frac", finetune.train_frac}, {"epochs", finetune.epochs}, {"lr", finetune.lr}}},
      {"folds", folds},
      {"fold", fold},
      {"nas_lambdas", nas_lambdas},
      {"pit_lambdas", pit_lambdas},
      {"mps_lambdas", mps_lambdas},
      {"mps_bits", mps_bits},
      {"select_smallest", select_smallest},
      {"smooth_coeff", smooth_coeff},
      {"out_dir", out_dir},
      {"seed", seed},
  };
}

namespace {

// Copies j[key] into `dst` when present, after checking that every key of
// `j` is known.
template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void known_keys(const json& j, const json& defaults, const std::string& where) {
  if (!j.is_object()) throw Error("config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) throw Error("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
    if (defaults.at(k).is_object()) known_keys(v, defaults.at(k), where.empty() ? k : where + "." + k);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  known_keys(j, c.to_json(), "");
  if (j.contains("seed_arch")) {
    const auto& s = j["seed_arch"];
    take(s, "arch", c.seed_arch.arch);
    take(s, "width", c.seed_arch.width);
    take(s, "stages", c.seed_arch.stages);
    take(s, "kernel", c.seed_arch.kernel);
    take(s, "seed", c.seed_arch.seed);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    take(d, "source", c.data.source);
    take(d, "csv_dir", c.data.csv_dir);
    take(d, "n_subjects", c.data.n_subjects);
    take(d, "seconds", c.data.seconds);
    take(d, "offset_std", c.data.offset_std);
    take(d, "seed", c.data.seed);
    take(d, "decimate", c.data.decimate);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    take(t, "warmup_epochs", c.train.warmup_epochs);
    take(t, "search_epochs", c.train.search_epochs);
    take(t, "finetune_epochs", c.train.finetune_epochs);
    take(t, "patience", c.train.patience);
    take(t, "lr_w", c.train.lr_w);
    take(t, "lr_theta", c.train.lr_theta);
    take(t, "batch_size", c.train.batch_size);
    take(t, "alternate", c.train.alternate);
  }
  if (j.contains("finetune")) {
    const auto& f = j["finetune"];
    take(f, "mode", c.finetune.mode);
    take(f, "train_frac", c.finetune.train_frac);
    take(f, "epochs", c.finetune.epochs);
    take(f, "lr", c.finetune.lr);
  }
  take(j, "folds", c.folds);
  take(j, "fold", c.fold);
  take(j, "nas_lambdas", c.nas_lambdas);
  take(j, "pit_lambdas", c.pit_lambdas);
  take(j, "mps_lambdas", c.mps_lambdas);
  take(j, "mps_bits", c.mps_bits);
  take(j, "select_smallest", c.select_smallest);
  take(j, "smooth_coeff", c.smooth_coeff);
  take(j, "out_dir", c.out_dir);
  take(j, "seed", c.seed);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& p) {
  json j;
  try {
    j = json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw Error(p.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& p) const { write_file(p, to_json().dump(2) + "\n"); }

void ExperimentConfig::validate() const {
  const std::string t = task();  // also validates the architecture name
  if (data.source != "synth" && data.source != "csv") throw Error("data.source must be synth or csv");
  if (data.source == "csv" && data.csv_dir.empty()) throw Error("data.csv_dir is required for csv data");
  if (data.source == "synth" && data.n_subjects < folds) throw Error("fewer synthetic subjects than folds");
  if (data.decimate < 1) throw Error("data.decimate must be at least 1");
  if (folds < 2 || fold < 0 || fold >= folds) throw Error("fold must lie in [0, folds) with folds >= 2");
  if (train.batch_size < 1) throw Error("train.batch_size must be positive");
  if (finetune.mode != "temporal" && finetune.mode != "shuffled") throw Error("finetune.mode must be temporal or shuffled");
  if (std::abs(finetune.train_frac - 0.8) > 1e-9 && std::abs(finetune.train_frac - 0.2) > 1e-9)
    throw Error("finetune.train_frac must be 0.8 or 0.2");
  for (const auto* g : {&nas_lambdas, &pit_lambdas, &mps_lambdas})
    for (double l : *g)
      if (!(l >= 0.0)) throw Error("lambda values must be non-negative");
  if (mps_bits.empty()) throw Error("mps_bits must not be empty");
  if (!(smooth_coeff > 0.0)) throw Error("smooth_coeff must be positive");
  (void)t;
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("override '" + assignment + "' must look like key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace bpc
