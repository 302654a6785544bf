#ifndef SEDKD_H
#define SEDKD_H

/* C interface to the sedkd toolkit.
 *
 * Every call returns a status code. On failure a thread-local message and
 * error kind describe the last error. Handles are opaque and owned by the
 * caller, who releases them with the matching destroy function. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SEDKD_API __attribute__((visibility("default")))
#else
#define SEDKD_API
#endif

typedef enum sedkd_status {
  SEDKD_OK = 0,
  SEDKD_ERR_USAGE = 1,    /* bad argument, config key or value; shape mismatch */
  SEDKD_ERR_DATA = 2,     /* missing, malformed or inconsistent files; I/O; checkpoint version */
  SEDKD_ERR_NUMERIC = 3,  /* NaN/inf during training, numeric domain errors */
  SEDKD_ERR_INTERNAL = 4  /* anything else */
} sedkd_status;

typedef struct sedkd_config sedkd_config;
typedef struct sedkd_report sedkd_report;

/* Receives one progress line (no trailing newline needed) per call. */
typedef void (*sedkd_log_fn)(const char* line, void* user);

SEDKD_API const char* sedkd_version(void);
/* Message and kind ("parameter", "data", "numeric_failure", ...) of the
 * last failed call on this thread; empty strings after a success. */
SEDKD_API const char* sedkd_last_error(void);
SEDKD_API const char* sedkd_last_error_kind(void);

/* ---- configuration ---- */
SEDKD_API sedkd_status sedkd_config_create(sedkd_config** out);
SEDKD_API sedkd_status sedkd_config_load(const char* path, sedkd_config** out);
SEDKD_API sedkd_status sedkd_config_parse(const char* text, sedkd_config** out);
/* key is "section.key", e.g. "train.epochs". */
SEDKD_API sedkd_status sedkd_config_set(sedkd_config* config, const char* key, const char* value);
/* Copies the value with its terminator into buf when it fits; *needed
 * receives the full length including the terminator. */
SEDKD_API sedkd_status sedkd_config_get(const sedkd_config* config, const char* key, char* buf,
                                        size_t capacity, size_t* needed);
/* "pts", "pts+tfd", "pts+tfd+afl", ... */
SEDKD_API sedkd_status sedkd_config_set_ablation(sedkd_config* config, const char* ablation);
SEDKD_API sedkd_status sedkd_config_validate(const sedkd_config* config);
SEDKD_API sedkd_status sedkd_config_save(const sedkd_config* config, const char* path);
SEDKD_API void sedkd_config_destroy(sedkd_config* config);

/* ---- pipeline ----
 * A NULL directory argument falls back to paths.data_root / paths.out_dir. */
SEDKD_API sedkd_status sedkd_gen_data(const sedkd_config* config, const char* root,
                                      sedkd_log_fn log, void* user);
SEDKD_API sedkd_status sedkd_train(const sedkd_config* config, const char* data_root,
                                   const char* out_dir, int resume, double* best_event_f1,
                                   sedkd_log_fn log, void* user);
/* tier: "strong", "weak", "unlabeled", "dev" (default when NULL) or "all". */
SEDKD_API sedkd_status sedkd_predict(const sedkd_config* config, const char* checkpoint,
                                     const char* data_root, const char* out_dir, const char* tier,
                                     unsigned threads, sedkd_log_fn log, void* user);
SEDKD_API sedkd_status sedkd_postprocess(const sedkd_config* config, const char* predict_dir,
                                         const char* data_root, const char* out_dir,
                                         sedkd_log_fn log, void* user);
SEDKD_API sedkd_status sedkd_evaluate(const char* refs_path, const char* preds_path,
                                      const char* data_root, const char* out_dir,
                                      sedkd_report** out, sedkd_log_fn log, void* user);

/* ---- evaluation reports ----
 * metric: "event", "segment" or "tagging". */
SEDKD_API sedkd_status sedkd_report_macro(const sedkd_report* report, const char* metric,
                                          double* f1, double* precision, double* recall);
SEDKD_API size_t sedkd_report_class_count(const sedkd_report* report);
SEDKD_API sedkd_status sedkd_report_class(const sedkd_report* report, const char* metric,
                                          size_t index, size_t* tp, size_t* fp, size_t* fn,
                                          double* f1);
SEDKD_API void sedkd_report_destroy(sedkd_report* report);

#ifdef __cplusplus
}
#endif

#endif
