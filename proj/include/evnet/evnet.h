/* C interface to the evnet engine. Every call returns an evnet_status; on
 * failure evnet_last_error() describes the problem (thread-local, valid
 * until the next call on the same thread). Strings and buffers handed out
 * by the library are released with evnet_string_free / evnet_buffer_free. */
#ifndef EVNET_EVNET_H
#define EVNET_EVNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(EVNET_BUILDING_LIBRARY)
#define EVNET_API __attribute__((visibility("default")))
#else
#define EVNET_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum evnet_status {
  EVNET_OK = 0,
  EVNET_ERR_INVALID_ARGUMENT = 1,
  EVNET_ERR_IO = 2,
  EVNET_ERR_FORMAT = 3,
  EVNET_ERR_NUMERIC = 4,
  EVNET_ERR_STATE = 5,
  EVNET_ERR_NOT_FOUND = 6,
  EVNET_ERR_INTERNAL = 7
} evnet_status;

typedef struct evnet_dataset evnet_dataset;
typedef struct evnet_model evnet_model;
typedef struct evnet_service evnet_service;

/* Called after every epoch with a JSON object describing it. Returning
 * non-zero has no effect; training always runs to completion. */
typedef void (*evnet_progress_fn)(const char* epoch_json, void* user);

#define EVNET_LABEL_OPTIONAL 1

EVNET_API const char* evnet_version(void);
EVNET_API const char* evnet_last_error(void);
EVNET_API void evnet_string_free(char* s);
EVNET_API void evnet_buffer_free(double* buffer);

/* Datasets. label_column may be NULL. With EVNET_LABEL_OPTIONAL a missing
 * label column is not an error. */
EVNET_API evnet_status evnet_dataset_load_csv(const char* path, const char* label_column, int flags,
                                              evnet_dataset** out);
/* spec: "kind:key=value,..." with kind gaussians, swiss_roll or noisy_gaussians. */
EVNET_API evnet_status evnet_dataset_synthetic(const char* spec, uint64_t seed, evnet_dataset** out);
EVNET_API evnet_status evnet_dataset_save_csv(const evnet_dataset* d, const char* path);
EVNET_API evnet_status evnet_dataset_shape(const evnet_dataset* d, size_t* rows, size_t* cols, int* has_labels);
EVNET_API evnet_status evnet_dataset_split(const evnet_dataset* d, double train_fraction, uint64_t seed,
                                           evnet_dataset** train, evnet_dataset** test);
/* JSON summary: sizes, names, per-feature range, noise feature indices. */
EVNET_API evnet_status evnet_dataset_summary_json(const evnet_dataset* d, char** out_json);
EVNET_API void evnet_dataset_free(evnet_dataset* d);

/* Training configuration as JSON. Missing keys take defaults; the resolved
 * document lists every key. */
EVNET_API evnet_status evnet_config_resolve(const char* config_json, char** out_json);

/* Normalizes `raw`, builds its kNN graph and trains. If training hits a
 * non-finite value the call returns EVNET_ERR_NUMERIC and, when possible,
 * stores the state from before the failing epoch in *out. */
EVNET_API evnet_status evnet_train(const evnet_dataset* raw, const char* config_json, size_t threads,
                                   evnet_progress_fn progress, void* user, evnet_model** out);
/* Continues training for `epochs` more epochs on the same data. */
EVNET_API evnet_status evnet_model_continue(evnet_model* model, const evnet_dataset* raw, size_t epochs,
                                            size_t threads);
EVNET_API evnet_status evnet_model_save(const evnet_model* model, const char* path);
EVNET_API evnet_status evnet_model_load(const char* path, evnet_model** out);
EVNET_API evnet_status evnet_model_report_json(const evnet_model* model, char** out_json);
EVNET_API evnet_status evnet_model_config_json(const evnet_model* model, char** out_json);
EVNET_API evnet_status evnet_model_info(const evnet_model* model, size_t* input_dim, size_t* active_features);
EVNET_API void evnet_model_free(evnet_model* model);

/* Embedding of `raw` (normalized with the model's statistics). *out_xy holds
 * rows x 2 values in row-major order. */
EVNET_API evnet_status evnet_embed(const evnet_model* model, const evnet_dataset* raw, size_t threads,
                                   double** out_xy, size_t* rows);
/* Writes header x,y (plus label when `raw` has labels), one row per input row. */
EVNET_API evnet_status evnet_embed_csv(const evnet_model* model, const evnet_dataset* raw, const char* path,
                                       size_t threads);

/* K-means on the feature columns of `points`; returns the cluster model JSON. */
EVNET_API evnet_status evnet_cluster(const evnet_dataset* points, size_t k, uint64_t seed, char** out_json);

EVNET_API evnet_status evnet_explain_global(const evnet_model* model, char** out_json);
/* request_json: {"cluster_id": c} or {"point_ids": [...]}, plus optional
 * "repeats", "seed", "average_all". clusters_json comes from evnet_cluster
 * on the embedding of `raw`. */
EVNET_API evnet_status evnet_explain_local(const evnet_model* model, const evnet_dataset* raw,
                                           const char* clusters_json, const char* request_json, size_t threads,
                                           char** out_json);
/* request_json: {"c1": a, "c2": b} plus the optional keys above. */
EVNET_API evnet_status evnet_explain_transform(const evnet_model* model, const evnet_dataset* raw,
                                               const char* clusters_json, const char* request_json, size_t threads,
                                               char** out_json);

EVNET_API evnet_status evnet_eval_rre(const evnet_dataset* high, const evnet_dataset* low, size_t k, size_t threads,
                                      double* out);
/* Both need labels on `embedding`. */
EVNET_API evnet_status evnet_eval_linear(const evnet_dataset* embedding, size_t folds, uint64_t seed, double* out);
/* clusters_json may be NULL: K-means with one cluster per class is used. */
EVNET_API evnet_status evnet_eval_clustering(const evnet_dataset* embedding, const char* clusters_json,
                                             uint64_t seed, double* out);

/* HTTP service. data_dir may be NULL (memory only). */
EVNET_API evnet_status evnet_service_create(const char* data_dir, size_t threads, evnet_service** out);
/* Transport-free request handling; query is the part after '?', may be NULL. */
EVNET_API evnet_status evnet_service_handle(evnet_service* svc, const char* method, const char* path,
                                            const char* query, const char* body, int* http_status,
                                            char** out_body);
/* Blocks until evnet_service_stop is called from another thread. */
EVNET_API evnet_status evnet_service_listen(evnet_service* svc, const char* host, int port);
EVNET_API void evnet_service_stop(evnet_service* svc);
EVNET_API void evnet_service_free(evnet_service* svc);

#ifdef __cplusplus
}
#endif

#endif
