#ifndef MMMP_H
#define MMMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MmmpStatus {
  MMMP_STATUS_OK = 0,
  MMMP_STATUS_NULL_POINTER = 1,
  MMMP_STATUS_INVALID_ARGUMENT = 2,
  MMMP_STATUS_IO = 3,
  MMMP_STATUS_FORMAT = 4,
  MMMP_STATUS_DATA = 5,
  MMMP_STATUS_NUMERICAL = 6,
  MMMP_STATUS_PANIC = 7,
} MmmpStatus;

typedef enum MmmpMethod {
  MMMP_METHOD_L1 = 0,
  MMMP_METHOD_L2 = 1,
  MMMP_METHOD_MP = 2,
  MMMP_METHOD_MMMP = 3,
} MmmpMethod;

/**
 * Opaque feature bundle.
 */
typedef struct MmmpBundle MmmpBundle;

/**
 * Opaque trained model.
 */
typedef struct MmmpModel MmmpModel;

/**
 * Training options; obtain defaults from [`mmmp_train_options_default`].
 */
typedef struct MmmpTrainOptions {
  enum MmmpMethod method;
  double lambda1;
  double lambda2;
  double lambda3;
  double epsilon;
  uint32_t max_iters;
  /**
   * Nonzero: warm start per modality, then fine-tune (MMMP only).
   */
  uint8_t two_step;
  uint8_t standardize;
  uint8_t bias;
} MmmpTrainOptions;

/**
 * Planted-support synthetic data parameters.
 */
typedef struct MmmpSyntheticSpec {
  size_t parts;
  size_t modalities;
  size_t noise_modalities;
  size_t block_dim;
  size_t classes;
  size_t n_train;
  size_t n_test;
  size_t active_parts;
  double noise;
  size_t subjects;
  uint64_t seed;
} MmmpSyntheticSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mmmp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mmmp_version(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one options struct.
 */
enum MmmpStatus mmmp_train_options_default(struct MmmpTrainOptions *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one spec struct.
 */
enum MmmpStatus mmmp_synthetic_spec_default(struct MmmpSyntheticSpec *out);

/**
 * Generates a synthetic bundle. Training rows come first (`n_train` of
 * them), then test rows.
 *
 * # Safety
 * `spec` must be null or valid; `out` must be null or writable.
 */
enum MmmpStatus mmmp_synthetic_generate(const struct MmmpSyntheticSpec *spec,
                                        struct MmmpBundle **out);

/**
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` null or writable.
 */
enum MmmpStatus mmmp_bundle_read(const char *path, struct MmmpBundle **out);

/**
 * # Safety
 * `bundle` must be null or a live handle; `path` null or NUL-terminated.
 */
enum MmmpStatus mmmp_bundle_write(const struct MmmpBundle *bundle, const char *path);

/**
 * Releases a bundle; null is ignored.
 *
 * # Safety
 * `bundle` must be null or a handle not yet freed.
 */
void mmmp_bundle_free(struct MmmpBundle *bundle);

/**
 * Sample count; 0 for null.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t mmmp_bundle_num_samples(const struct MmmpBundle *bundle);

/**
 * Feature count; 0 for null.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t mmmp_bundle_num_features(const struct MmmpBundle *bundle);

/**
 * Class count; 0 for null.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t mmmp_bundle_num_classes(const struct MmmpBundle *bundle);

/**
 * Copies row `row` into `out`, which must hold exactly
 * `mmmp_bundle_num_features` values, and optionally its label.
 *
 * # Safety
 * `out` must be valid for `len` writes; `label` null or writable.
 */
enum MmmpStatus mmmp_bundle_row(const struct MmmpBundle *bundle,
                                size_t row,
                                double *out,
                                size_t len,
                                size_t *label);

/**
 * Trains on the listed rows (all rows when `rows` is null and `n_rows` 0).
 *
 * # Safety
 * Handles must be live; `rows` valid for `n_rows` reads; `out` writable.
 */
enum MmmpStatus mmmp_model_train(const struct MmmpBundle *bundle,
                                 const struct MmmpTrainOptions *options,
                                 const size_t *rows,
                                 size_t n_rows,
                                 struct MmmpModel **out);

/**
 * # Safety
 * `path` null or NUL-terminated; `out` null or writable.
 */
enum MmmpStatus mmmp_model_read(const char *path, struct MmmpModel **out);

/**
 * # Safety
 * `model` null or live; `path` null or NUL-terminated.
 */
enum MmmpStatus mmmp_model_write(const struct MmmpModel *model, const char *path);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mmmp_model_free(struct MmmpModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mmmp_model_num_classes(const struct MmmpModel *model);

/**
 * Length of the raw feature vectors `mmmp_model_predict` expects.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mmmp_model_num_features(const struct MmmpModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mmmp_model_num_parts(const struct MmmpModel *model);

/**
 * Predicts the class of one raw feature vector. `scores` may be null;
 * otherwise it receives `scores_len == num_classes` values.
 *
 * # Safety
 * `x` valid for `len` reads; `class_out` writable; `scores` null or valid
 * for `scores_len` writes.
 */
enum MmmpStatus mmmp_model_predict(const struct MmmpModel *model,
                                   const double *x,
                                   size_t len,
                                   size_t *class_out,
                                   double *scores,
                                   size_t scores_len);

/**
 * Magnitude of `part` in the weights of `class`.
 *
 * # Safety
 * `model` null or live; `out` writable.
 */
enum MmmpStatus mmmp_model_part_activation(const struct MmmpModel *model,
                                           size_t class_,
                                           size_t part,
                                           double *out);

/**
 * Accuracy of the model on the listed rows of a bundle.
 *
 * # Safety
 * Handles live; `rows` valid for `n_rows` reads; `accuracy` writable.
 */
enum MmmpStatus mmmp_model_evaluate(const struct MmmpModel *model,
                                    const struct MmmpBundle *bundle,
                                    const size_t *rows,
                                    size_t n_rows,
                                    double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMMP_H */
