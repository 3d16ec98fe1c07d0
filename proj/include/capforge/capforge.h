/* SPDX-License-Identifier: Apache-2.0 */
#ifndef CAPFORGE_CAPFORGE_H
#define CAPFORGE_CAPFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CAPFORGE_BUILDING_LIBRARY)
#    define CAP_API __declspec(dllexport)
#  else
#    define CAP_API __declspec(dllimport)
#  endif
#else
#  define CAP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cap_status {
    CAP_OK = 0,
    CAP_E_INVALID = 1,  /* bad argument, unknown key, config conflict */
    CAP_E_IO = 2,       /* missing or unreadable file */
    CAP_E_FORMAT = 3,   /* malformed manifest, shape mismatch, bad JSON */
    CAP_E_NUMERIC = 4,  /* non-finite values during training or scoring */
    CAP_E_INTERNAL = 5
} cap_status;

typedef struct cap_config cap_config;
typedef struct cap_dataset cap_dataset;
typedef struct cap_model cap_model;

CAP_API const char* cap_version(void);

/* Message of the last failed call on this thread. Never NULL. */
CAP_API const char* cap_last_error(void);

/* Frees strings returned through char** out-parameters. NULL is ignored. */
CAP_API void cap_string_free(char* s);

/* ---- configuration ---- */

CAP_API cap_status cap_config_create(cap_config** out);
CAP_API void cap_config_destroy(cap_config* cfg);
CAP_API cap_status cap_config_set(cap_config* cfg, const char* key, const char* value);
CAP_API cap_status cap_config_get(const cap_config* cfg, const char* key, char** out_value);
/* key = value text file; [section] headers prefix keys. */
CAP_API cap_status cap_config_load_file(cap_config* cfg, const char* path);
/* Applies CAPFORGE_* variables from a NULL-terminated "NAME=value" array (e.g. environ). */
CAP_API cap_status cap_config_apply_env(cap_config* cfg, const char* const* envp);
CAP_API cap_status cap_config_to_json(const cap_config* cfg, char** out_json);

/* ---- data ---- */

/* Generates a synthetic dataset from the synth.* keys and writes it, with
 * ground_truth.json and descriptions.json, into out_dir. */
CAP_API cap_status cap_synth_generate(const cap_config* cfg, const char* out_dir);

CAP_API cap_status cap_dataset_load(const char* dir, cap_dataset** out);
CAP_API void cap_dataset_destroy(cap_dataset* ds);
CAP_API cap_status cap_dataset_shape(const cap_dataset* ds, size_t* n_samples, size_t* n_classes, size_t* dim);

/* ---- pipeline stages; every JSON result embeds the effective config ---- */

CAP_API cap_status cap_detect(const cap_dataset* ds, const cap_config* cfg, char** out_report_json);

/* report_json is the output of cap_detect. */
CAP_API cap_status cap_pseudolabel(const cap_dataset* ds, const cap_config* cfg, const char* report_json,
                                   char** out_pl_json);

/* Trains adapters on the pseudolabel set. out_metric_log (optional) receives
 * one JSON object per line, one line per epoch. */
CAP_API cap_status cap_train(const cap_dataset* ds, const cap_config* cfg, const char* pl_json, cap_model** out_model,
                             char** out_metric_log);

/* ---- models ---- */

CAP_API cap_status cap_model_create_zero(size_t dim, double gamma, cap_model** out);
CAP_API void cap_model_destroy(cap_model* m);
CAP_API cap_status cap_model_save(const cap_model* m, const cap_config* cfg, const char* dir);
CAP_API cap_status cap_model_load(const char* dir, cap_model** out);

/* Inference logits for every sample, row-major n_samples x n_classes.
 * `out` must hold n_samples * n_classes doubles. */
CAP_API cap_status cap_model_logits(const cap_model* m, const cap_dataset* ds, double* out, size_t out_len);

/* Evaluation report as JSON. pl_json may be NULL. When out_dir is not NULL,
 * eval.json, per_class.csv and confidence_density.csv are written there. */
CAP_API cap_status cap_eval(const cap_model* m, const cap_dataset* ds, const cap_config* cfg, const char* pl_json,
                            const char* out_dir, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* CAPFORGE_CAPFORGE_H */
