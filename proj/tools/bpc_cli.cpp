// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Everything goes through the C interface.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bpc/bpc.h"

namespace {

struct CliError {
  int code;
};

void check(bpc_status s) {
  if (s == BPC_OK) return;
  std::cerr << "error (" << bpc_status_name(s) << "): " << bpc_last_error() << "\n";
  throw CliError{static_cast<int>(s)};
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "experiment config (JSON)");
  sub->add_option("-s,--set", c.overrides, "override a config field, e.g. train.patience=10")->take_all();
}

bpc_config* make_config(const Common& c) {
  bpc_config* cfg = nullptr;
  check(c.config.empty() ? bpc_config_default(&cfg) : bpc_config_load(c.config.c_str(), &cfg));
  for (const auto& o : c.overrides) {
    const bpc_status s = bpc_config_override(cfg, o.c_str());
    if (s != BPC_OK) bpc_config_free(cfg);
    check(s);
  }
  return cfg;
}

// Reads one window per line. With a "subject,sbp,dbp,..." header the first
// three columns are metadata and are echoed next to the predictions.
struct WindowFile {
  std::vector<std::string> tags;
  std::vector<double> values;
  int rows = 0;
  int cols = 0;
};

WindowFile read_windows(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    throw CliError{BPC_ERR_IO};
  }
  WindowFile f;
  std::string line;
  bool labelled = false;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("subject", 0) == 0) {
      labelled = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell, tag;
    int col = 0, n = 0;
    while (std::getline(ss, cell, ',')) {
      if (labelled && col < 3) {
        tag += (col ? "," : "") + cell;
      } else {
        try {
          f.values.push_back(std::stod(cell));
        } catch (const std::exception&) {
          std::cerr << "error: " << path << ":" << lineno << ": not a number: " << cell << "\n";
          throw CliError{BPC_ERR_INVALID_ARGUMENT};
        }
        ++n;
      }
      ++col;
    }
    if (f.rows > 0 && n != f.cols) {
      std::cerr << "error: " << path << ":" << lineno << ": expected " << f.cols << " samples, got " << n << "\n";
      throw CliError{BPC_ERR_INVALID_ARGUMENT};
    }
    f.cols = n;
    f.tags.push_back(tag);
    ++f.rows;
  }
  return f;
}

// Fold directory of a config: <out_dir>/fold<k>.
std::string fold_root(bpc_config* cfg) {
  char* js = nullptr;
  check(bpc_config_to_json(cfg, &js));
  const auto j = nlohmann::json::parse(js);
  bpc_string_free(js);
  return j.at("out_dir").get<std::string>() + "/fold" + std::to_string(j.at("fold").get<int>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blood-pressure model optimization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  Common common;

  auto* synth = app.add_subcommand("synth-data", "write a synthetic PPG/ABP cohort as CSV records");
  std::string synth_out = "data";
  int synth_n = 40;
  double synth_sec = 300.0, synth_off = 0.0;
  std::uint64_t synth_seed = 7;
  synth->add_option("-o,--out", synth_out, "output directory")->capture_default_str();
  synth->add_option("-n,--subjects", synth_n, "number of subjects")->capture_default_str();
  synth->add_option("--seconds", synth_sec, "record length")->capture_default_str();
  synth->add_option("--offset-std", synth_off, "per-subject pressure offset std (mmHg)")->capture_default_str();
  synth->add_option("--seed", synth_seed, "random seed")->capture_default_str();

  auto* prep = app.add_subcommand("preprocess", "segment, screen and split the configured records");
  std::string prep_out = "windows";
  add_common(prep, common);
  prep->add_option("-o,--out", prep_out, "output directory")->capture_default_str();

  auto* seed = app.add_subcommand("seed", "train the seed architecture of the configured fold");
  auto* nas = app.add_subcommand("nas", "architecture search over the NAS lambda grid");
  auto* prune = app.add_subcommand("prune", "channel pruning over the PIT lambda grid");
  auto* mps = app.add_subcommand("mps", "mixed-precision search over the MPS lambda grid");
  for (auto* s : {seed, nas, prune, mps}) add_common(s, common);

  std::string model_ref = "seed";
  auto* ft = app.add_subcommand("finetune", "subject-specific fine-tuning on the test subjects of the fold");
  auto* ev = app.add_subcommand("eval", "test-fold metrics and AAMI check of a trained model");
  std::string eval_out;
  for (auto* s : {ft, ev}) {
    add_common(s, common);
    s->add_option("-m,--model", model_ref, "model reference inside the fold, e.g. nas/l03")->capture_default_str();
  }
  ev->add_option("-o,--out", eval_out, "also write the report to this file");

  auto* exp = app.add_subcommand("export", "integer export of a frozen-precision model");
  std::string exp_model, exp_out;
  exp->add_option("-m,--model", exp_model, "model stem (path without .json/.bin)")->required();
  exp->add_option("-o,--out", exp_out, "output stem")->required();

  auto* run = app.add_subcommand("run-int", "run an integer model on a window file and print predictions");
  std::string run_model, run_windows;
  bool run_raw = false;
  run->add_option("-m,--model", run_model, "integer model stem")->required();
  run->add_option("-w,--windows", run_windows, "CSV with one window per line (inputs.csv from preprocess)")->required();
  run->add_flag("--raw", run_raw, "print normalized head outputs instead of mmHg");

  auto* sum = app.add_subcommand("summarize", "per-layer tables and a cost/MAE table of every model");
  std::string sum_root;
  add_common(sum, common);
  sum->add_option("-r,--root", sum_root, "output directory (defaults to the configured fold)");

  auto* par = app.add_subcommand("pareto", "Pareto front of a points CSV");
  std::string par_points, par_obj = "sbp", par_axis = "native", par_out = "front";
  par->add_option("-p,--points", par_points, "points CSV")->required();
  par->add_option("--objective", par_obj, "sbp, dbp or mean")->capture_default_str();
  par->add_option("--cost-axis", par_axis, "native, params or bits")->capture_default_str();
  par->add_option("-o,--out", par_out, "output stem")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    check(bpc_set_log_level(log_level.c_str()));
    if (*synth) {
      check(bpc_synth_data(synth_n, synth_sec, synth_off, synth_seed, synth_out.c_str()));
      std::printf("wrote %d records to %s\n", synth_n, synth_out.c_str());
    } else if (*prep) {
      bpc_config* cfg = make_config(common);
      int valid = 0, total = 0;
      const bpc_status s = bpc_preprocess(cfg, prep_out.c_str(), &valid, &total);
      bpc_config_free(cfg);
      check(s);
      std::printf("%d of %d windows valid; outputs in %s\n", valid, total, prep_out.c_str());
    } else if (*seed || *nas || *prune || *mps) {
      const char* stage = *seed ? "seed" : *nas ? "nas" : *prune ? "pit" : "mps";
      bpc_config* cfg = make_config(common);
      int n = 0;
      const bpc_status s = bpc_run_stage(cfg, stage, &n);
      const std::string root = s == BPC_OK ? fold_root(cfg) : "";
      bpc_config_free(cfg);
      check(s);
      std::printf("%s: %d candidates in %s\n", stage, n, root.c_str());
    } else if (*ft) {
      bpc_config* cfg = make_config(common);
      double a = 0, b = 0, c = 0, d = 0;
      const bpc_status s = bpc_finetune(cfg, model_ref.c_str(), &a, &b, &c, &d);
      bpc_config_free(cfg);
      check(s);
      std::printf("median MAE SBP %.2f -> %.2f, DBP %.2f -> %.2f\n", a, b, c, d);
    } else if (*ev) {
      bpc_config* cfg = make_config(common);
      char* report = nullptr;
      const bpc_status s = bpc_evaluate(cfg, model_ref.c_str(), &report);
      bpc_config_free(cfg);
      check(s);
      std::printf("%s\n", report);
      if (!eval_out.empty()) std::ofstream(eval_out) << report << "\n";
      bpc_string_free(report);
    } else if (*exp) {
      check(bpc_model_export(exp_model.c_str(), exp_out.c_str()));
      bpc_qmodel* q = nullptr;
      check(bpc_qmodel_load(exp_out.c_str(), &q));
      std::size_t bytes = 0;
      check(bpc_qmodel_footprint(q, &bytes));
      bpc_qmodel_free(q);
      std::printf("wrote %s.json/.bin (%zu bytes of weights, biases and scales)\n", exp_out.c_str(), bytes);
    } else if (*run) {
      bpc_qmodel* q = nullptr;
      check(bpc_qmodel_load(run_model.c_str(), &q));
      int ch = 0, len = 0;
      check(bpc_qmodel_input_shape(q, &ch, &len));
      const auto w = read_windows(run_windows);
      if (w.cols != ch * len) {
        bpc_qmodel_free(q);
        std::cerr << "error: model expects " << ch * len << " samples per window, file has " << w.cols << "\n";
        return BPC_ERR_INVALID_ARGUMENT;
      }
      std::size_t n = 0;
      bpc_status s = bpc_qmodel_run(q, w.values.data(), w.rows, run_raw ? 0 : 1, nullptr, 0, &n);
      std::vector<double> y(n);
      if (s == BPC_ERR_BUFFER_TOO_SMALL) s = bpc_qmodel_run(q, w.values.data(), w.rows, run_raw ? 0 : 1, y.data(), y.size(), &n);
      bpc_qmodel_free(q);
      check(s);
      const std::size_t per = n / static_cast<std::size_t>(w.rows);
      for (int r = 0; r < w.rows; ++r) {
        std::string line = w.tags[static_cast<std::size_t>(r)];
        for (std::size_t k = 0; k < per; ++k) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.3f", y[static_cast<std::size_t>(r) * per + k]);
          line += (line.empty() ? "" : ",") + std::string(buf);
        }
        std::printf("%s\n", line.c_str());
      }
    } else if (*sum) {
      std::string root = sum_root;
      if (root.empty()) {
        bpc_config* cfg = make_config(common);
        root = fold_root(cfg);
        bpc_config_free(cfg);
      }
      int n = 0;
      check(bpc_summarize(root.c_str(), &n));
      std::printf("summarized %d models under %s (models.csv, layers.csv)\n", n, root.c_str());
    } else if (*par) {
      int n = 0;
      check(bpc_pareto(par_points.c_str(), par_obj.c_str(), par_axis.c_str(), par_out.c_str(), &n));
      std::printf("%d Pareto-optimal points written to %s.csv/.svg\n", n, par_out.c_str());
    }
  } catch (const CliError& e) {
    return e.code;
  }
  return 0;
}
