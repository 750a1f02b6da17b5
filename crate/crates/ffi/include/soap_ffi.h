#ifndef SOAP_FFI_H
#define SOAP_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SoapStatus {
  SOAP_STATUS_OK = 0,
  SOAP_STATUS_USAGE = 1,
  SOAP_STATUS_UNDEFINED_METRIC = 2,
  SOAP_STATUS_NUMERIC_INPUT = 3,
  SOAP_STATUS_DIVISION_DOMAIN = 4,
  SOAP_STATUS_PRECONDITION = 5,
  SOAP_STATUS_INVARIANT = 6,
  SOAP_STATUS_RUN_FAILED = 7,
  SOAP_STATUS_PARSE = 8,
  SOAP_STATUS_IO = 9,
  SOAP_STATUS_NULL_POINTER = 10,
  SOAP_STATUS_PANIC = 11,
} SoapStatus;

typedef enum SoapMethod {
  SOAP_METHOD_SOAP_SGD = 0,
  SOAP_METHOD_SOAP_ADAM = 1,
  SOAP_METHOD_SOAP_AMSGRAD = 2,
  SOAP_METHOD_CE = 3,
  SOAP_METHOD_CB_CE = 4,
  SOAP_METHOD_FOCAL = 5,
} SoapMethod;

typedef enum SoapSurrogate {
  SOAP_SURROGATE_SQUARED_HINGE = 0,
  SOAP_SURROGATE_LOGISTIC = 1,
  SOAP_SURROGATE_SIGMOID = 2,
} SoapSurrogate;

/**
 * Opaque dataset handle.
 */
typedef struct SoapDataset SoapDataset;

/**
 * Opaque model handle.
 */
typedef struct SoapModel SoapModel;

/**
 * Training settings. Obtain defaults from [`soap_train_options_default`].
 */
typedef struct SoapTrainOptions {
  enum SoapMethod method;
  enum SoapSurrogate surrogate;
  /**
   * Margin for the squared hinge, scale for logistic and sigmoid.
   */
  double surrogate_param;
  size_t iters;
  size_t batch_size;
  size_t batch_pos;
  double alpha;
  double gamma;
  double u0;
  uint64_t seed;
} SoapTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap` bytes. Returns the length the
 * full message needs including the terminator, or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t soap_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *soap_version(void);

/**
 * Average precision of `scores` against labels in {-1, +1}.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements; `out` must be
 * writable.
 */
enum SoapStatus soap_average_precision(const double *scores,
                                       const int8_t *labels,
                                       size_t n,
                                       double *out);

/**
 * Two isotropic Gaussian classes; see the core generator.
 *
 * # Safety
 * `out` must be writable; on success it receives a handle owned by the caller.
 */
enum SoapStatus soap_dataset_generate(size_t n,
                                      size_t d,
                                      double ratio,
                                      double sep,
                                      uint64_t seed,
                                      struct SoapDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum SoapStatus soap_dataset_load_csv(const char *path, struct SoapDataset **out);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t soap_dataset_len(const struct SoapDataset *data);

/**
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t soap_dataset_dim(const struct SoapDataset *data);

/**
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t soap_dataset_n_pos(const struct SoapDataset *data);

/**
 * Copies the labels into `out`, which must hold `soap_dataset_len` values.
 *
 * # Safety
 * `data` must be a live handle and `out` must point to enough writable space.
 */
enum SoapStatus soap_dataset_labels(const struct SoapDataset *data, int8_t *out);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void soap_dataset_free(struct SoapDataset *data);

/**
 * Linear scorer with zero initial weights.
 *
 * # Safety
 * `out` must be writable.
 */
enum SoapStatus soap_model_new_linear(size_t d_in, bool squash, struct SoapModel **out);

/**
 * Tanh MLP with `n_hidden` hidden layers of the given widths.
 *
 * # Safety
 * `hidden` must point to `n_hidden` readable values and `out` be writable.
 */
enum SoapStatus soap_model_new_mlp(size_t d_in,
                                   const size_t *hidden,
                                   size_t n_hidden,
                                   bool squash,
                                   uint64_t seed,
                                   struct SoapModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum SoapStatus soap_model_load(const char *path, struct SoapModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum SoapStatus soap_model_save(const struct SoapModel *model, const char *path);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t soap_model_param_count(const struct SoapModel *model);

/**
 * Scores every row of `data` into `out`, which must hold
 * `soap_dataset_len(data)` values.
 *
 * # Safety
 * Both handles must be live and `out` must point to enough writable space.
 */
enum SoapStatus soap_model_forward(const struct SoapModel *model,
                                   const struct SoapDataset *data,
                                   double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void soap_model_free(struct SoapModel *model);

struct SoapTrainOptions soap_train_options_default(void);

/**
 * Trains `model` in place on `data`. On failure the model is unchanged.
 *
 * # Safety
 * `model` and `data` must be live handles; `opts` must point to valid
 * options.
 */
enum SoapStatus soap_train(struct SoapModel *model,
                           const struct SoapDataset *data,
                           const struct SoapTrainOptions *opts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOAP_FFI_H */
