/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C ABI of the latentkf library.
 *
 * Every fallible call returns an lkf_status; on failure the calling thread's
 * lkf_last_error() describes the cause until the next failing call on that
 * thread. Handles are opaque and owned by the caller once returned; release
 * them with the matching *_free function (NULL is accepted). Strings returned
 * through char** are heap-allocated and released with lkf_string_free.
 *
 * Experiment entry points take and return UTF-8 JSON documents.
 */
#ifndef LATENTKF_H
#define LATENTKF_H

#include <stddef.h>

#if defined(_WIN32)
#define LKF_API __declspec(dllexport)
#elif defined(LKF_BUILDING_LIBRARY)
#define LKF_API __attribute__((visibility("default")))
#else
#define LKF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lkf_status {
  LKF_OK = 0,
  LKF_ERR_INVALID_ARGUMENT = 1,
  LKF_ERR_INVALID_STATE = 2,
  LKF_ERR_SHAPE = 3,
  LKF_ERR_FORMAT = 4,
  LKF_ERR_IO = 5,
  LKF_ERR_DIVERGENCE = 6,
  LKF_ERR_NUMERICAL = 7,
  LKF_ERR_INTERNAL = 99
} lkf_status;

typedef struct lkf_dataset lkf_dataset;
typedef struct lkf_pipeline lkf_pipeline;
typedef struct lkf_session lkf_session;

/* Receives one progress line per call; `user` is passed through unchanged. */
typedef void (*lkf_log_fn)(const char* line, void* user);

LKF_API const char* lkf_version(void);
LKF_API const char* lkf_status_string(lkf_status status);
/* Message of the last failure on this thread; "" when none. */
LKF_API const char* lkf_last_error(void);
LKF_API void lkf_string_free(char* s);
/* Process-wide progress sink for long-running calls; NULL disables. */
LKF_API void lkf_set_log_callback(lkf_log_fn fn, void* user);

/* -- datasets ---------------------------------------------------------------- */

/* Config keys: model ("pendulum"|"lorenz"), noise_level, count, length, seed,
 * decimation (default 1), taylor_j (Lorenz, default 5). */
LKF_API lkf_status lkf_dataset_generate(const char* config_json, lkf_dataset** out);
LKF_API lkf_status lkf_dataset_load(const char* dir, lkf_dataset** out);
LKF_API lkf_status lkf_dataset_save(const lkf_dataset* ds, const char* dir);
LKF_API lkf_status lkf_dataset_info(const lkf_dataset* ds, size_t* count, size_t* length, size_t* state_dim,
                                    size_t* frame_size);
/* Copies x_t of trajectory d (state_dim doubles) into `out`. */
LKF_API lkf_status lkf_dataset_state(const lkf_dataset* ds, size_t d, size_t t, double* out, size_t out_len);
/* Copies frame y_t of trajectory d (frame_size floats) into `out`. */
LKF_API lkf_status lkf_dataset_frame(const lkf_dataset* ds, size_t d, size_t t, float* out, size_t out_len);
LKF_API void lkf_dataset_free(lkf_dataset* ds);

/* -- trained pipelines ---------------------------------------------------------- */

/* Loads a combined checkpoint. `model_json` selects the filter-side dynamics:
 * {"model": "lorenz", "taylor_j": 5} or {"model": "pendulum"}. */
LKF_API lkf_status lkf_pipeline_load(const char* dir, const char* model_json, lkf_pipeline** out);
LKF_API lkf_status lkf_pipeline_dims(const lkf_pipeline* p, size_t* state_dim, size_t* latent_dim, size_t* frame_size);
LKF_API lkf_status lkf_pipeline_param_count(const lkf_pipeline* p, size_t* count);
/* Filters trajectory d of `ds` from x0; writes length * state_dim doubles (row 0 = x0). */
LKF_API lkf_status lkf_pipeline_infer(const lkf_pipeline* p, const lkf_dataset* ds, size_t d, const double* x0,
                                      double* out, size_t out_len);
LKF_API void lkf_pipeline_free(lkf_pipeline* p);

/* Step-wise inference; one session per trajectory, independent of other sessions. */
LKF_API lkf_status lkf_session_create(const lkf_pipeline* p, lkf_session** out);
LKF_API lkf_status lkf_session_reset(lkf_session* s, const double* x0, size_t m);
LKF_API lkf_status lkf_session_step(lkf_session* s, const float* frame, size_t n, double* x_out, size_t m);
LKF_API void lkf_session_free(lkf_session* s);

/* -- experiments ------------------------------------------------------------------ */

/* Config keys (all optional): model, noise_levels, variants, seeds, t_train, t_test,
 * taylor_j, decimate, count, test_count, out, cache_dir, full_scale, epochs, warm_epochs,
 * encoder_epochs. Results: {"records": [...], "diagnostics": [...], "notes": [...],
 * "metrics_path": "...", "plots": [...]}. */
LKF_API lkf_status lkf_train(const char* config_json, char** result_json);
LKF_API lkf_status lkf_evaluate(const char* config_json, char** result_json);
/* Uses taylor_j < 5 for the Taylor study, otherwise decimate > 1 for the sampling study. */
LKF_API lkf_status lkf_mismatch(const char* config_json, char** result_json);
LKF_API lkf_status lkf_latency(const char* config_json, char** result_json);
/* Renders <out_dir>/<csv stem>.svg; result lists written files and warnings. */
LKF_API lkf_status lkf_plot(const char* csv_path, const char* out_dir, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* LATENTKF_H */
