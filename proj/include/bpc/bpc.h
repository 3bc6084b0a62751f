// SPDX-License-Identifier: Apache-2.0
/*
 * C interface of the blood-pressure model compression toolkit.
 *
 * Every call returns a bpc_status. On failure, bpc_last_error() returns a
 * message describing the most recent error of the calling thread; the
 * pointer stays valid until the next failing call on that thread.
 * Handles are opaque and must be released with the matching *_free call.
 * Strings returned through char** are released with bpc_string_free.
 */
#ifndef BPC_BPC_H
#define BPC_BPC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define BPC_API __declspec(dllexport)
#else
#define BPC_API __attribute__((visibility("default")))
#endif

typedef enum bpc_status {
  BPC_OK = 0,
  BPC_ERR_INVALID_ARGUMENT = 1, /* null pointer, bad value or malformed config */
  BPC_ERR_IO = 2,               /* file missing or unreadable */
  BPC_ERR_MISSING_ARTIFACT = 3, /* an earlier stage has not produced its outputs */
  BPC_ERR_LEAKAGE = 4,          /* a subject would be evaluated on a model trained with it */
  BPC_ERR_BUFFER_TOO_SMALL = 5, /* required size returned through the length pointer */
  BPC_ERR_RUNTIME = 6           /* any other failure */
} bpc_status;

typedef struct bpc_config bpc_config;
typedef struct bpc_model bpc_model;
typedef struct bpc_qmodel bpc_qmodel;

BPC_API const char* bpc_version(void);
BPC_API const char* bpc_last_error(void);
BPC_API const char* bpc_status_name(bpc_status s);
BPC_API void bpc_string_free(char* s);
/* "trace", "debug", "info", "warn", "error" or "off". */
BPC_API bpc_status bpc_set_log_level(const char* level);

/* ---- experiment configuration ---- */
BPC_API bpc_status bpc_config_default(bpc_config** out);
BPC_API bpc_status bpc_config_load(const char* path, bpc_config** out);
BPC_API bpc_status bpc_config_from_json(const char* json, bpc_config** out);
/* Dotted assignment such as "train.patience=10" or "nas_lambdas=[1e-6,1e-5]". */
BPC_API bpc_status bpc_config_override(bpc_config* cfg, const char* assignment);
BPC_API bpc_status bpc_config_to_json(const bpc_config* cfg, char** out);
BPC_API bpc_status bpc_config_save(const bpc_config* cfg, const char* path);
BPC_API void bpc_config_free(bpc_config* cfg);

/* ---- data ---- */
/* Writes one CSV record (time,ppg,abp) per synthetic subject into out_dir. */
BPC_API bpc_status bpc_synth_data(int n_subjects, double seconds, double offset_std, uint64_t seed, const char* out_dir);
/* Segments and screens the configured records. Writes into out_dir:
 * windows.csv (one row per window with labels and rejection reason),
 * inputs.csv (model inputs of the valid windows: subject,sbp,dbp,x0..) and
 * split.json (subject folds). */
BPC_API bpc_status bpc_preprocess(const bpc_config* cfg, const char* out_dir, int* n_valid, int* n_total);

/* ---- optimization flow ---- */
/* stage: "seed", "nas", "pit" or "mps". */
BPC_API bpc_status bpc_run_stage(const bpc_config* cfg, const char* stage, int* n_candidates);
/* Fine-tunes the model `ref` (for example "seed" or "mps/seed/l03") on every
 * test subject of the configured fold. Results are written under the fold
 * directory; the median MAEs are returned through the optional pointers. */
BPC_API bpc_status bpc_finetune(const bpc_config* cfg, const char* ref, double* pre_sbp, double* post_sbp,
                                double* pre_dbp, double* post_dbp);
/* Test-fold metrics of model `ref` with the AAMI check, as JSON. */
BPC_API bpc_status bpc_evaluate(const bpc_config* cfg, const char* ref, char** report_json);
/* Per-layer tables and a global cost/MAE table for every model under root. */
BPC_API bpc_status bpc_summarize(const char* root, int* n_models);
/* Pareto front of a points CSV. objective: "sbp", "dbp" or "mean";
 * cost_axis: "native", "params" or "bits". Writes <out_stem>.csv and .svg. */
BPC_API bpc_status bpc_pareto(const char* points_csv, const char* objective, const char* cost_axis,
                              const char* out_stem, int* n_front);
BPC_API bpc_status bpc_aami_check(double me, double std, int n_subjects, int* pass, char** note);

/* ---- float models ---- */
BPC_API bpc_status bpc_model_load(const char* stem, bpc_model** out);
BPC_API bpc_status bpc_model_param_count(const bpc_model* m, size_t* out);
/* Input shape expected by the model (channels, length). */
BPC_API bpc_status bpc_model_input_shape(const bpc_model* m, int* channels, int* length);
/* x holds n*channels*length doubles; y receives the raw head outputs.
 * When y_cap is too small the required length is stored in *y_len. */
BPC_API bpc_status bpc_model_predict(bpc_model* m, const double* x, int n, double* y, size_t y_cap, size_t* y_len);
/* Integer export of a model whose precisions are frozen. */
BPC_API bpc_status bpc_model_export(const char* model_stem, const char* out_stem);
BPC_API void bpc_model_free(bpc_model* m);

/* ---- integer models ---- */
BPC_API bpc_status bpc_qmodel_load(const char* stem, bpc_qmodel** out);
BPC_API bpc_status bpc_qmodel_input_shape(const bpc_qmodel* m, int* channels, int* length);
BPC_API bpc_status bpc_qmodel_footprint(const bpc_qmodel* m, size_t* total_bytes);
/* Integer execution. With denormalize != 0 the outputs are mapped back to
 * mmHg with the target normalization stored in the model. */
BPC_API bpc_status bpc_qmodel_run(const bpc_qmodel* m, const double* x, int n, int denormalize, double* y,
                                  size_t y_cap, size_t* y_len);
BPC_API void bpc_qmodel_free(bpc_qmodel* m);

#ifdef __cplusplus
}
#endif

#endif /* BPC_BPC_H */
