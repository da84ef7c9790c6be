#ifndef SWGEE_H
#define SWGEE_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SwgeeStatus {
  SWGEE_STATUS_OK = 0,
  SWGEE_STATUS_NULL_POINTER = 1,
  SWGEE_STATUS_INVALID_ARGUMENT = 2,
  SWGEE_STATUS_INPUT = 3,
  SWGEE_STATUS_INFEASIBLE = 4,
  SWGEE_STATUS_UNIDENTIFIED = 5,
  SWGEE_STATUS_NON_CONVERGENCE = 6,
  SWGEE_STATUS_NUMERICAL = 7,
  SWGEE_STATUS_BUFFER_TOO_SMALL = 8,
  SWGEE_STATUS_PANIC = 9,
} SwgeeStatus;

typedef enum SwgeeLink {
  SWGEE_LINK_LOGIT = 0,
  SWGEE_LINK_LOG = 1,
  SWGEE_LINK_IDENTITY = 2,
} SwgeeLink;

typedef enum SwgeeStructure {
  SWGEE_STRUCTURE_INDEPENDENCE = 0,
  SWGEE_STRUCTURE_EXCHANGEABLE = 1,
  SWGEE_STRUCTURE_NESTED_EXCHANGEABLE = 2,
  SWGEE_STRUCTURE_EXPONENTIAL_DECAY = 3,
} SwgeeStructure;

typedef enum SwgeeAdjustment {
  SWGEE_ADJUSTMENT_UEE = 0,
  SWGEE_ADJUSTMENT_MAEE = 1,
} SwgeeAdjustment;

/**
 * Variance estimator: model-based or one of the four sandwich corrections.
 */
typedef enum SwgeeVariance {
  SWGEE_VARIANCE_MODEL_BASED = 0,
  SWGEE_VARIANCE_BC0 = 1,
  SWGEE_VARIANCE_BC1 = 2,
  SWGEE_VARIANCE_BC2 = 3,
  SWGEE_VARIANCE_BC3 = 4,
} SwgeeVariance;

/**
 * Opaque fit handle; keeps a copy of the data it was fitted to.
 */
typedef struct SwgeeFit SwgeeFit;

/**
 * Opaque trial handle.
 */
typedef struct SwgeeTrial SwgeeTrial;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *swgee_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *swgee_version(void);

/**
 * Builds a trial from row-major `n_clusters x n_periods` matrices of
 * cluster-period sizes, event totals and 0/1 treatment indicators.
 *
 * # Safety
 * Each matrix pointer must reference `n_clusters * n_periods` readable
 * elements; `out` must be writable.
 */
enum SwgeeStatus swgee_trial_new(size_t n_clusters,
                                 size_t n_periods,
                                 const uint64_t *sizes,
                                 const uint64_t *totals,
                                 const uint8_t *treatment,
                                 struct SwgeeTrial **out);

/**
 * Reads a trial from a CSV file: cluster-period rows
 * (`cluster,period,treatment,n,y`) or, with `individual` set, one row per
 * participant (`cluster,period,treatment,outcome`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SwgeeStatus swgee_trial_from_csv(const char *path, bool individual, struct SwgeeTrial **out);

/**
 * # Safety
 * `trial` must be null or a handle from this library not yet freed.
 */
void swgee_trial_free(struct SwgeeTrial *trial);

/**
 * # Safety
 * `trial` must be a live handle; the output pointers must be writable.
 */
enum SwgeeStatus swgee_trial_dims(const struct SwgeeTrial *trial,
                                  size_t *n_clusters,
                                  size_t *n_periods);

/**
 * Fits the marginal model with default iteration controls. A fit that
 * stops at the iteration limit still returns a handle; check
 * [`swgee_fit_converged`].
 *
 * # Safety
 * `trial` must be a live handle; `out` must be writable.
 */
enum SwgeeStatus swgee_fit(const struct SwgeeTrial *trial,
                           enum SwgeeLink link,
                           enum SwgeeStructure structure,
                           enum SwgeeAdjustment adjustment,
                           struct SwgeeFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from this library not yet freed.
 */
void swgee_fit_free(struct SwgeeFit *fit);

/**
 * Returns 1 if converged, 0 if not, -1 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
int32_t swgee_fit_converged(const struct SwgeeFit *fit);

/**
 * Copies the mean parameters (period effects, then the treatment effect)
 * into `buf`. `written` (optional) receives the number of values; when the
 * buffer is too small it still receives the required length.
 *
 * # Safety
 * `fit` must be a live handle and `buf` must hold `len` writable values.
 */
enum SwgeeStatus swgee_fit_theta(const struct SwgeeFit *fit,
                                 double *buf,
                                 size_t len,
                                 size_t *written);

/**
 * Copies the correlation parameters (none for independence).
 *
 * # Safety
 * As for [`swgee_fit_theta`].
 */
enum SwgeeStatus swgee_fit_alpha(const struct SwgeeFit *fit,
                                 double *buf,
                                 size_t len,
                                 size_t *written);

/**
 * Standard errors under the chosen variance estimator: mean then
 * correlation parameters for the sandwich corrections, mean parameters only
 * for the model-based estimator.
 *
 * # Safety
 * As for [`swgee_fit_theta`].
 */
enum SwgeeStatus swgee_fit_standard_errors(const struct SwgeeFit *fit,
                                           enum SwgeeVariance variance,
                                           double *buf,
                                           size_t len,
                                           size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWGEE_H */
