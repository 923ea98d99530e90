#ifndef TRIPLET_META_H
#define TRIPLET_META_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_NULL_POINTER = 1,
  TM_STATUS_INVALID_INPUT = 2,
  TM_STATUS_CONFIG = 3,
  TM_STATUS_DEPENDENCY = 4,
  TM_STATUS_ORACLE = 5,
  TM_STATUS_NUMERIC = 6,
  TM_STATUS_IO = 7,
  TM_STATUS_PANIC = 8,
} TmStatus;

typedef enum TmLogBase {
  TM_LOG_BASE_NATURAL = 0,
  TM_LOG_BASE_BASE2 = 1,
  TM_LOG_BASE_BASE10 = 2,
} TmLogBase;

/**
 * A k-means partition.
 */
typedef struct TmClusters TmClusters;

/**
 * A loaded study table.
 */
typedef struct TmDataset TmDataset;

/**
 * A trained embedding with its history.
 */
typedef struct TmTraining TmTraining;

/**
 * Training hyperparameters. Obtain defaults from [`tm_train_config_default`].
 */
typedef struct TmTrainConfig {
  double margin;
  double learning_rate;
  size_t epochs;
  size_t batch_size;
  uint64_t seed;
  double init_scale;
  double beta1;
  double beta2;
  double epsilon;
} TmTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *tm_last_error_message(void);

const char *tm_version(void);

/**
 * Loads a `.csv` or `.json` study table.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TmStatus tm_dataset_load(const char *path, struct TmDataset **out);

/**
 * # Safety
 * `ds` must come from [`tm_dataset_load`] and not be freed.
 */
size_t tm_dataset_len(const struct TmDataset *ds);

/**
 * Copies effects and variances in study order; either buffer may be null.
 *
 * # Safety
 * Non-null buffers must hold `cap` doubles.
 */
enum TmStatus tm_dataset_effects(const struct TmDataset *ds,
                                 double *effects,
                                 double *variances,
                                 size_t cap);

/**
 * # Safety
 * `ds` must be null or come from [`tm_dataset_load`].
 */
void tm_dataset_free(struct TmDataset *ds);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum TmStatus tm_triplet_budget(size_t m,
                                size_t d,
                                uint32_t lambda,
                                enum TmLogBase log_base,
                                size_t *out);

/**
 * # Safety
 * `xa`, `xp` and `xn` must each hold `d` doubles; `out` must be valid.
 */
enum TmStatus tm_triplet_loss(const double *xa,
                              const double *xp,
                              const double *xn,
                              size_t d,
                              double margin,
                              double *out);

/**
 * # Safety
 * `effects` and `variances` must hold `n` doubles; `out` must be valid.
 */
enum TmStatus tm_reml_tau2(const double *effects, const double *variances, size_t n, double *out);

/**
 * Inverse-variance pooled mean and its standard error at a given τ².
 *
 * # Safety
 * `effects` and `variances` must hold `n` doubles; outputs must be valid.
 */
enum TmStatus tm_pooled_effect(const double *effects,
                               const double *variances,
                               size_t n,
                               double tau2,
                               double *mu_out,
                               double *se_out);

struct TmTrainConfig tm_train_config_default(void);

/**
 * Trains an `m × d` embedding on `n_triplets` (anchor, positive, negative)
 * index triples stored flat in `triples`.
 *
 * # Safety
 * `triples` must hold `3 * n_triplets` indices, `cfg` must be valid and
 * `out` a valid pointer.
 */
enum TmStatus tm_train(const size_t *triples,
                       size_t n_triplets,
                       size_t m,
                       size_t d,
                       const struct TmTrainConfig *cfg,
                       struct TmTraining **out);

/**
 * # Safety
 * `t` must come from [`tm_train`].
 */
size_t tm_training_best_epoch(const struct TmTraining *t);

/**
 * NaN for a null handle.
 *
 * # Safety
 * `t` must come from [`tm_train`].
 */
double tm_training_best_error(const struct TmTraining *t);

/**
 * Copies the best checkpoint, row-major `m × d`.
 *
 * # Safety
 * `buf` must hold `cap` doubles; `len_out` may be null.
 */
enum TmStatus tm_training_coords(const struct TmTraining *t,
                                 double *buf,
                                 size_t cap,
                                 size_t *len_out);

/**
 * # Safety
 * `t` must be null or come from [`tm_train`].
 */
void tm_training_free(struct TmTraining *t);

/**
 * k-means with k-means++ seeding over `m` points of dimension `d`.
 * `restarts` of 0 uses the library default.
 *
 * # Safety
 * `coords` must hold `m * d` doubles and `out` be valid.
 */
enum TmStatus tm_kmeans(const double *coords,
                        size_t m,
                        size_t d,
                        size_t k,
                        uint64_t seed,
                        size_t restarts,
                        struct TmClusters **out);

/**
 * NaN for a null handle.
 *
 * # Safety
 * `c` must come from [`tm_kmeans`].
 */
double tm_clusters_wcss(const struct TmClusters *c);

/**
 * # Safety
 * `buf` must hold `cap` entries; `len_out` may be null.
 */
enum TmStatus tm_clusters_labels(const struct TmClusters *c,
                                 size_t *buf,
                                 size_t cap,
                                 size_t *len_out);

/**
 * # Safety
 * `c` must be null or come from [`tm_kmeans`].
 */
void tm_clusters_free(struct TmClusters *c);

/**
 * # Safety
 * `a` and `b` must hold `n` labels; `out` must be valid.
 */
enum TmStatus tm_adjusted_rand_index(const size_t *a, const size_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIPLET_META_H */
