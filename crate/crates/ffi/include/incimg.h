#ifndef INCIMG_H
#define INCIMG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum IncimgStatus {
  INCIMG_STATUS_OK = 0,
  INCIMG_STATUS_NULL_POINTER = 1,
  INCIMG_STATUS_INVALID_UTF8 = 2,
  INCIMG_STATUS_CONFIG = 3,
  INCIMG_STATUS_INVALID_SCENARIO = 4,
  INCIMG_STATUS_INVALID_GRID = 5,
  INCIMG_STATUS_INVALID_ARGUMENT = 6,
  INCIMG_STATUS_NUMERICAL = 7,
  INCIMG_STATUS_IO = 8,
  INCIMG_STATUS_OUT_OF_RANGE = 9,
  INCIMG_STATUS_PANIC = 10,
} IncimgStatus;

/**
 * Experiment configuration (scenario, grid, probe, lattice, noise).
 */
typedef struct IncimgExperiment IncimgExperiment;

/**
 * Centers and tensors found by a reconstruction.
 */
typedef struct IncimgReconstruction IncimgReconstruction;

/**
 * Boundary trace, time-major.
 */
typedef struct IncimgTrace IncimgTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *incimg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *incimg_version(void);

/**
 * Parses and validates an experiment configuration from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IncimgStatus incimg_experiment_from_json(const char *json, struct IncimgExperiment **out);

/**
 * # Safety
 * `exp` must come from [`incimg_experiment_from_json`] or be null.
 */
void incimg_experiment_free(struct IncimgExperiment *exp);

/**
 * Number of inclusions in the experiment's scenario.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum IncimgStatus incimg_experiment_inclusion_count(const struct IncimgExperiment *exp,
                                                    size_t *out);

/**
 * Simulates the boundary trace for the plane-wave probe `(eta_x, eta_y)`.
 * With `difference` nonzero the homogeneous reference is subtracted.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum IncimgStatus incimg_forward(const struct IncimgExperiment *exp,
                                 double eta_x,
                                 double eta_y,
                                 int32_t difference,
                                 struct IncimgTrace **out);

/**
 * # Safety
 * `trace` must come from this library or be null.
 */
void incimg_trace_free(struct IncimgTrace *trace);

/**
 * Number of time levels and boundary samples.
 *
 * # Safety
 * `trace` must be a live handle; output pointers must be valid.
 */
enum IncimgStatus incimg_trace_shape(const struct IncimgTrace *trace,
                                     size_t *n_times,
                                     size_t *n_arc);

/**
 * Copies the trace as interleaved `(re, im)` pairs, time-major, into
 * `out`, which must hold `2 * n_times * n_arc` doubles.
 *
 * # Safety
 * `trace` must be a live handle and `out` must hold `len` doubles.
 */
enum IncimgStatus incimg_trace_copy(const struct IncimgTrace *trace, double *out, size_t len);

/**
 * Time step and arclength step of the trace sampling.
 *
 * # Safety
 * `trace` must be a live handle; output pointers must be valid.
 */
enum IncimgStatus incimg_trace_steps(const struct IncimgTrace *trace, double *dt, double *ds);

/**
 * Polarization tensor of a shape given as JSON (for example
 * `{"kind": "disk", "radius": 1.0}`), row-major into `out[4]`.
 * `outside` nonzero selects the exterior derivative convention.
 *
 * # Safety
 * `shape_json` must be a NUL-terminated string and `out` must hold 4 doubles.
 */
enum IncimgStatus incimg_shape_tensor(const char *shape_json,
                                      double contrast,
                                      size_t nodes,
                                      int32_t outside,
                                      double *out);

/**
 * Samples the spectrum on the configured lattice (default 17 x 17 up to
 * `|eta| = 8`), inverts it and fits tensors at the detected peaks.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum IncimgStatus incimg_reconstruct(const struct IncimgExperiment *exp,
                                     struct IncimgReconstruction **out);

/**
 * # Safety
 * `r` must come from [`incimg_reconstruct`] or be null.
 */
void incimg_reconstruction_free(struct IncimgReconstruction *r);

/**
 * Number of detected centers.
 *
 * # Safety
 * `r` must be a live handle and `out` a valid pointer.
 */
enum IncimgStatus incimg_reconstruction_count(const struct IncimgReconstruction *r, size_t *out);

/**
 * Center `index` into `center[2]` and its tensor, row-major, into `tensor[4]`.
 *
 * # Safety
 * `r` must be a live handle; `center` and `tensor` must hold 2 and 4 doubles.
 */
enum IncimgStatus incimg_reconstruction_get(const struct IncimgReconstruction *r,
                                            size_t index,
                                            double *center,
                                            double *tensor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INCIMG_H */
