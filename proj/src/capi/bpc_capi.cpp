// SPDX-License-Identifier: Apache-2.0
#include "bpc/bpc.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "core/serialize.hpp"
#include "core/trainer.hpp"
#include "eval/pareto.hpp"
#include "intrt/int_runtime.hpp"
#include "mps/mps.hpp"
#include "pipeline/finetune.hpp"
#include "pipeline/stages.hpp"
#include "pipeline/summary.hpp"
#include "signal/peaks.hpp"
#include "signal/preprocess.hpp"
#include "signal/record_io.hpp"
#include "signal/synth.hpp"

struct bpc_config {
  bpc::ExperimentConfig cfg;
};
struct bpc_model {
  bpc::ModelGraph g;
};
struct bpc_qmodel {
  bpc::QuantizedModel q;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_last_error;

bpc_status fail(bpc_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `f`, mapping exceptions to status codes.
template <class F>
bpc_status guarded(F&& f) {
  try {
    f();
    return BPC_OK;
  } catch (const bpc::MissingArtifactError& e) {
    return fail(BPC_ERR_MISSING_ARTIFACT, e.what());
  } catch (const bpc::LeakageError& e) {
    return fail(BPC_ERR_LEAKAGE, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(BPC_ERR_IO, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(BPC_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(BPC_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(BPC_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(BPC_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

struct NullArgument : std::invalid_argument {
  explicit NullArgument(const char* name) : std::invalid_argument(fmt::format("argument '{}' is null", name)) {}
};

#define BPC_REQUIRE(p) \
  if ((p) == nullptr) throw NullArgument(#p)

bpc::Tensor input_tensor(const double* x, int n, bpc::ActShape shape) {
  if (n <= 0) throw std::invalid_argument("window count must be positive");
  bpc::Tensor t({n, shape.channels, shape.length});
  std::memcpy(t.data().data(), x, t.size() * sizeof(double));
  return t;
}

void copy_out(const bpc::Tensor& y, double* out, std::size_t cap, std::size_t* len) {
  *len = y.size();
  if (cap < y.size()) throw std::length_error(fmt::format("output buffer holds {} values, {} required", cap, y.size()));
  std::memcpy(out, y.data().data(), y.size() * sizeof(double));
}

}  // namespace

extern "C" {

const char* bpc_version(void) { return "1.0.0"; }

const char* bpc_last_error(void) { return g_last_error.c_str(); }

const char* bpc_status_name(bpc_status s) {
  switch (s) {
    case BPC_OK: return "ok";
    case BPC_ERR_INVALID_ARGUMENT: return "invalid argument";
    case BPC_ERR_IO: return "i/o error";
    case BPC_ERR_MISSING_ARTIFACT: return "missing artifact";
    case BPC_ERR_LEAKAGE: return "subject leakage";
    case BPC_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case BPC_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

void bpc_string_free(char* s) { std::free(s); }

bpc_status bpc_set_log_level(const char* level) {
  return guarded([&] {
    BPC_REQUIRE(level);
    const auto l = spdlog::level::from_str(level);
    if (l == spdlog::level::off && std::string(level) != "off")
      throw std::invalid_argument(fmt::format("unknown log level '{}'", level));
    spdlog::set_level(l);
  });
}

bpc_status bpc_config_default(bpc_config** out) {
  return guarded([&] {
    BPC_REQUIRE(out);
    *out = new bpc_config{};
  });
}

bpc_status bpc_config_load(const char* path, bpc_config** out) {
  return guarded([&] {
    BPC_REQUIRE(path);
    BPC_REQUIRE(out);
    if (!fs::exists(path)) throw fs::filesystem_error("config not found", path, std::make_error_code(std::errc::no_such_file_or_directory));
    *out = new bpc_config{bpc::ExperimentConfig::load(path)};
  });
}

bpc_status bpc_config_from_json(const char* json, bpc_config** out) {
  return guarded([&] {
    BPC_REQUIRE(json);
    BPC_REQUIRE(out);
    *out = new bpc_config{bpc::ExperimentConfig::from_json(nlohmann::json::parse(json))};
  });
}

bpc_status bpc_config_override(bpc_config* cfg, const char* assignment) {
  const bpc_status s = guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(assignment);
    auto j = cfg->cfg.to_json();
    bpc::apply_override(j, assignment);
    cfg->cfg = bpc::ExperimentConfig::from_json(j);
  });
  // Config errors are argument errors regardless of how they surfaced.
  return s == BPC_ERR_RUNTIME ? BPC_ERR_INVALID_ARGUMENT : s;
}

bpc_status bpc_config_to_json(const bpc_config* cfg, char** out) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(out);
    *out = dup_string(cfg->cfg.to_json().dump(2));
  });
}

bpc_status bpc_config_save(const bpc_config* cfg, const char* path) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(path);
    cfg->cfg.save(path);
  });
}

void bpc_config_free(bpc_config* cfg) { delete cfg; }

bpc_status bpc_synth_data(int n_subjects, double seconds, double offset_std, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    BPC_REQUIRE(out_dir);
    if (n_subjects <= 0 || seconds <= 0) throw std::invalid_argument("subject count and duration must be positive");
    bpc::SynthOptions o;
    o.seconds = seconds;
    o.offset_std = offset_std;
    const auto cohort = bpc::synth_generate(n_subjects, seed, o);
    fs::create_directories(out_dir);
    for (const auto& r : cohort.records) bpc::save_record_csv(r, fs::path(out_dir) / (r.id + ".csv"));
    nlohmann::json truth = nlohmann::json::array();
    for (std::size_t i = 0; i < cohort.truth.size(); ++i) {
      const auto& t = cohort.truth[i];
      truth.push_back({{"subject", cohort.records[i].id}, {"sbp", t.sbp}, {"dbp", t.dbp}, {"hr", t.hr},
                       {"lag_s", t.lag_s}, {"offset", t.offset}});
    }
    bpc::write_file(fs::path(out_dir) / "truth.json", truth.dump(2));
  });
}

bpc_status bpc_preprocess(const bpc_config* cfg, const char* out_dir, int* n_valid, int* n_total) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(out_dir);
    const auto records = bpc::load_records(cfg->cfg.data);
    std::string csv = "subject,index,valid,reason,sbp,dbp,hr\n";
    int valid = 0, total = 0;
    for (const auto& r : records) {
      for (const auto& w : bpc::preprocess_record(r)) {
        csv += fmt::format("{},{},{},{},{:.3f},{:.3f},{:.2f}\n", w.subject, w.index, w.valid ? 1 : 0, w.reason, w.sbp,
                           w.dbp, w.hr);
        valid += w.valid ? 1 : 0;
        ++total;
      }
    }
    fs::create_directories(out_dir);
    bpc::write_file(fs::path(out_dir) / "windows.csv", csv);
    const auto cohort = bpc::build_cohort(records, cfg->cfg);
    std::string inputs = "subject,sbp,dbp";
    for (int i = 0; i < cohort.input_length; ++i) inputs += fmt::format(",x{}", i);
    inputs += '\n';
    for (const auto& w : cohort.windows) {
      inputs += fmt::format("{},{:.3f},{:.3f}", w.subject, w.sbp, w.dbp);
      for (double v : bpc::window_input(w, cohort)) inputs += fmt::format(",{:.9g}", v);
      inputs += '\n';
    }
    bpc::write_file(fs::path(out_dir) / "inputs.csv", inputs);
    const auto fold = bpc::make_fold(cohort, cfg->cfg);
    bpc::write_file(fs::path(out_dir) / "split.json", fold.split.to_json().dump(2));
    if (n_valid) *n_valid = valid;
    if (n_total) *n_total = total;
  });
}

bpc_status bpc_run_stage(const bpc_config* cfg, const char* stage, int* n_candidates) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(stage);
    bpc::StageContext ctx(cfg->cfg);
    const auto c = bpc::run_stage(ctx, stage);
    if (n_candidates) *n_candidates = static_cast<int>(c.size());
  });
}

bpc_status bpc_finetune(const bpc_config* cfg, const char* ref, double* pre_sbp, double* post_sbp, double* pre_dbp,
                        double* post_dbp) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(ref);
    bpc::StageContext ctx(cfg->cfg);
    const auto out = bpc::finetune_fold(ctx, ref);
    if (out.empty()) throw bpc::Error("no test subject has enough windows to fine-tune");
    std::vector<double> a, b, c, d;
    for (const auto& o : out) {
      a.push_back(o.pre.sbp.mae);
      b.push_back(o.post.sbp.mae);
      c.push_back(o.pre.dbp.mae);
      d.push_back(o.post.dbp.mae);
    }
    if (pre_sbp) *pre_sbp = bpc::median(a);
    if (post_sbp) *post_sbp = bpc::median(b);
    if (pre_dbp) *pre_dbp = bpc::median(c);
    if (post_dbp) *post_dbp = bpc::median(d);
  });
}

bpc_status bpc_evaluate(const bpc_config* cfg, const char* ref, char** report_json) {
  return guarded([&] {
    BPC_REQUIRE(cfg);
    BPC_REQUIRE(ref);
    BPC_REQUIRE(report_json);
    bpc::StageContext ctx(cfg->cfg);
    auto g = bpc::load_model(ctx.root, ref);
    const auto rep = bpc::evaluate_windows(g, ctx.fold.test_w, ctx.cohort, ctx.cfg.smooth_coeff);
    auto j = rep.to_json();
    const auto sbp = bpc::aami_check(rep.sbp.me, rep.sbp.std, rep.n_subjects);
    const auto dbp = bpc::aami_check(rep.dbp.me, rep.dbp.std, rep.n_subjects);
    const auto both = bpc::aami_check(rep);
    j["aami"] = {{"pass", both.pass}, {"note", both.note}, {"sbp_pass", sbp.pass}, {"dbp_pass", dbp.pass}};
    j["model"] = ref;
    *report_json = dup_string(j.dump(2));
  });
}

bpc_status bpc_summarize(const char* root, int* n_models) {
  return guarded([&] {
    BPC_REQUIRE(root);
    const int n = bpc::summarize_outputs(root);
    if (n_models) *n_models = n;
  });
}

bpc_status bpc_pareto(const char* points_csv, const char* objective, const char* cost_axis, const char* out_stem,
                      int* n_front) {
  return guarded([&] {
    BPC_REQUIRE(points_csv);
    BPC_REQUIRE(objective);
    BPC_REQUIRE(cost_axis);
    BPC_REQUIRE(out_stem);
    if (!fs::exists(points_csv))
      throw fs::filesystem_error("points file not found", points_csv, std::make_error_code(std::errc::no_such_file_or_directory));
    const std::string axis = cost_axis;
    bpc::CostAxis a;
    if (axis == "native") a = bpc::CostAxis::Native;
    else if (axis == "params") a = bpc::CostAxis::Params;
    else if (axis == "bits") a = bpc::CostAxis::Bits;
    else throw std::invalid_argument("unknown cost axis '" + axis + "'");
    const auto obj = bpc::objective_from_name(objective);
    const auto pts = bpc::with_cost_axis(bpc::read_points_csv(points_csv), a);
    const auto front = bpc::pareto_front(pts, obj);
    const fs::path stem(out_stem);
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    bpc::write_points_csv(front, fs::path(stem.string() + ".csv"));
    bpc::write_pareto_svg(pts, obj, fs::path(stem.string() + ".svg"));
    if (n_front) *n_front = static_cast<int>(front.size());
  });
}

bpc_status bpc_aami_check(double me, double std, int n_subjects, int* pass, char** note) {
  return guarded([&] {
    BPC_REQUIRE(pass);
    const auto r = bpc::aami_check(me, std, n_subjects);
    *pass = r.pass ? 1 : 0;
    if (note) *note = dup_string(r.note);
  });
}

bpc_status bpc_model_load(const char* stem, bpc_model** out) {
  return guarded([&] {
    BPC_REQUIRE(stem);
    BPC_REQUIRE(out);
    if (!fs::exists(std::string(stem) + ".json"))
      throw fs::filesystem_error("model not found", std::string(stem) + ".json",
                                 std::make_error_code(std::errc::no_such_file_or_directory));
    *out = new bpc_model{bpc::load_graph(stem)};
  });
}

bpc_status bpc_model_param_count(const bpc_model* m, size_t* out) {
  return guarded([&] {
    BPC_REQUIRE(m);
    BPC_REQUIRE(out);
    *out = m->g.param_count();
  });
}

bpc_status bpc_model_input_shape(const bpc_model* m, int* channels, int* length) {
  return guarded([&] {
    BPC_REQUIRE(m);
    if (channels) *channels = m->g.input_shape.channels;
    if (length) *length = m->g.input_shape.length;
  });
}

bpc_status bpc_model_predict(bpc_model* m, const double* x, int n, double* y, size_t y_cap, size_t* y_len) {
  const bpc_status s = guarded([&] {
    BPC_REQUIRE(m);
    BPC_REQUIRE(x);
    BPC_REQUIRE(y_len);
    bpc::RunOptions o;
    o.training = false;
    const auto out = bpc::predict(m->g, input_tensor(x, n, m->g.input_shape), o);
    if (y == nullptr && y_cap > 0) throw NullArgument("y");
    copy_out(out, y, y_cap, y_len);
  });
  return (s == BPC_ERR_RUNTIME && std::strstr(g_last_error.c_str(), "output buffer")) ? BPC_ERR_BUFFER_TOO_SMALL : s;
}

bpc_status bpc_model_export(const char* model_stem, const char* out_stem) {
  return guarded([&] {
    BPC_REQUIRE(model_stem);
    BPC_REQUIRE(out_stem);
    const auto g = bpc::load_graph(model_stem);
    const auto q = bpc::export_quantized(g);
    const fs::path stem(out_stem);
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    q.save(stem);
  });
}

void bpc_model_free(bpc_model* m) { delete m; }

bpc_status bpc_qmodel_load(const char* stem, bpc_qmodel** out) {
  return guarded([&] {
    BPC_REQUIRE(stem);
    BPC_REQUIRE(out);
    if (!fs::exists(std::string(stem) + ".json"))
      throw fs::filesystem_error("integer model not found", std::string(stem) + ".json",
                                 std::make_error_code(std::errc::no_such_file_or_directory));
    *out = new bpc_qmodel{bpc::QuantizedModel::load(stem)};
  });
}

bpc_status bpc_qmodel_input_shape(const bpc_qmodel* m, int* channels, int* length) {
  return guarded([&] {
    BPC_REQUIRE(m);
    if (channels) *channels = m->q.input_shape.channels;
    if (length) *length = m->q.input_shape.length;
  });
}

bpc_status bpc_qmodel_footprint(const bpc_qmodel* m, size_t* total_bytes) {
  return guarded([&] {
    BPC_REQUIRE(m);
    BPC_REQUIRE(total_bytes);
    *total_bytes = m->q.footprint().total();
  });
}

bpc_status bpc_qmodel_run(const bpc_qmodel* m, const double* x, int n, int denormalize, double* y, size_t y_cap,
                          size_t* y_len) {
  const bpc_status s = guarded([&] {
    BPC_REQUIRE(m);
    BPC_REQUIRE(x);
    BPC_REQUIRE(y_len);
    bpc::Tensor out = bpc::int_predict(m->q, input_tensor(x, n, m->q.input_shape));
    if (denormalize != 0) {
      if (!m->q.meta.contains("norm")) throw bpc::Error("model carries no target normalization");
      const auto norm = bpc::TargetNorm::from_json(m->q.meta.at("norm"));
      for (int i = 0; i < out.dim(0); ++i)
        for (int c = 0; c < out.dim(1); ++c)
          for (int l = 0; l < out.dim(2); ++l) {
            const auto k = static_cast<std::size_t>(c);
            out.at(i, c, l) = out.at(i, c, l) * norm.std.at(k) + norm.mean.at(k);
          }
    }
    if (y == nullptr && y_cap > 0) throw NullArgument("y");
    copy_out(out, y, y_cap, y_len);
  });
  return (s == BPC_ERR_RUNTIME && std::strstr(g_last_error.c_str(), "output buffer")) ? BPC_ERR_BUFFER_TOO_SMALL : s;
}

void bpc_qmodel_free(bpc_qmodel* m) { delete m; }

}  // extern "C"
