#ifndef SSPSC_H
#define SSPSC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum SspscStatus {
  SSPSC_STATUS_OK = 0,
  SSPSC_STATUS_NULL_POINTER = 1,
  /**
   * Rejected input: shapes, labels, hyperparameters, file contents.
   */
  SSPSC_STATUS_INVALID_INPUT = 2,
  /**
   * A numerical routine failed.
   */
  SSPSC_STATUS_NUMERIC = 3,
  SSPSC_STATUS_IO = 4,
  SSPSC_STATUS_PANIC = 5,
} SspscStatus;

typedef enum SspscLoss {
  SSPSC_LOSS_HINGE = 0,
  SSPSC_LOSS_LOGISTIC = 1,
  SSPSC_LOSS_EXPONENTIAL = 2,
} SspscLoss;

/**
 * Opaque source/target training data.
 */
typedef struct SspscDataset SspscDataset;

/**
 * Opaque trained model.
 */
typedef struct SspscModel SspscModel;

/**
 * Mirror of the library hyperparameters.
 */
typedef struct SspscHyperparams {
  double c1;
  double c2;
  double c3;
  size_t r;
  size_t k;
  double delta;
  double rho;
  enum SspscLoss loss;
  size_t max_outer_iters;
  size_t max_inner_iters;
  double tol;
  uint64_t seed;
  /**
   * Nonzero selects the largest eigenvalues in the subspace step.
   */
  int32_t eigen_largest;
} SspscHyperparams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *sspsc_last_error(void);

/**
 * Default hyperparameters for `dim` features.
 *
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
enum SspscStatus sspsc_hyperparams_default(size_t dim, struct SspscHyperparams *out);

/**
 * Copies training data into a new dataset. Labels are ±1; `target_labels`
 * covers the first `n_target_labeled` target rows.
 *
 * # Safety
 * Each pointer must be null or valid for the stated number of elements;
 * `out` must be writable.
 */
enum SspscStatus sspsc_dataset_new(const double *source_features,
                                   const int32_t *source_labels,
                                   size_t n_source,
                                   const double *target_features,
                                   size_t n_target,
                                   const int32_t *target_labels,
                                   size_t n_target_labeled,
                                   size_t dim,
                                   struct SspscDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from [`sspsc_dataset_new`] not yet freed.
 */
void sspsc_dataset_free(struct SspscDataset *dataset);

/**
 * Trains a model. `hyperparams` may be null for the defaults.
 *
 * # Safety
 * `dataset` must be a live handle, `hyperparams` null or valid, `out`
 * writable.
 */
enum SspscStatus sspsc_fit(const struct SspscDataset *dataset,
                           const struct SspscHyperparams *hyperparams,
                           struct SspscModel **out);

/**
 * Target-domain scores and ±1 labels for `n_rows` rows of `dim` features.
 *
 * # Safety
 * `model` must be a live handle; `features` valid for `n_rows·dim`
 * doubles; `scores` and `labels` null or writable for `n_rows` elements.
 */
enum SspscStatus sspsc_predict(const struct SspscModel *model,
                               const double *features,
                               size_t n_rows,
                               size_t dim,
                               double *scores,
                               int32_t *labels);

/**
 * Feature dimension of a model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sspsc_model_dim(const struct SspscModel *model);

/**
 * Copies the target classifier `𝛗` (`dim` doubles) into `out`.
 *
 * # Safety
 * `model` must be a live handle; `out` writable for `dim` doubles.
 */
enum SspscStatus sspsc_model_target_weights(const struct SspscModel *model,
                                            double *out,
                                            size_t dim);

/**
 * # Safety
 * `model` must be a live handle and `path` a nul-terminated UTF-8 string.
 */
enum SspscStatus sspsc_model_save(const struct SspscModel *model, const char *path);

/**
 * # Safety
 * `path` must be a nul-terminated UTF-8 string and `out` writable.
 */
enum SspscStatus sspsc_model_load(const char *path, struct SspscModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sspsc_model_free(struct SspscModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSPSC_H */
