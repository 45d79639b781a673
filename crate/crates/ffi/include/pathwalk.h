#ifndef PATHWALK_H
#define PATHWALK_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all fallible calls.
 */
typedef enum PwStatus {
  PW_STATUS_OK = 0,
  PW_STATUS_NULL_POINTER = 1,
  PW_STATUS_INVALID_ARGUMENT = 2,
  PW_STATUS_CONFIG = 3,
  PW_STATUS_DIVERGED = 4,
  PW_STATUS_DEGENERATE_NORMAL = 5,
  PW_STATUS_PROJECTION_FAILURE = 6,
  PW_STATUS_INITIALIZATION_FAILURE = 7,
  PW_STATUS_UNSUPPORTED = 8,
  PW_STATUS_IO = 9,
  PW_STATUS_NOT_INITIALIZED = 10,
  PW_STATUS_BUFFER_TOO_SMALL = 11,
  PW_STATUS_PANIC = 12,
} PwStatus;

/**
 * Opaque sampler handle.
 */
typedef struct PwSampler PwSampler;

/**
 * Running totals of a sampler handle.
 */
typedef struct PwStats {
  uint64_t steps;
  uint64_t accepted;
  uint64_t reject_mh;
  uint64_t reject_newton;
  uint64_t reject_reversibility;
  uint64_t blow_up;
  double acceptance_rate;
  double mean_newton_iters;
} PwStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *pw_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pw_version(void);

/**
 * Build a sampler from the text of a run configuration. Only the `[model]`,
 * `[observable]` and `[sampler]` tables are used; chains run one at a time
 * through [`pw_sampler_step`] on stream `seed`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PwStatus pw_sampler_new_from_toml(const char *toml, struct PwSampler **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `sampler` must be null or a handle from [`pw_sampler_new_from_toml`] that
 * has not been freed.
 */
void pw_sampler_free(struct PwSampler *sampler);

/**
 * Find a point on the level set, then adapt the tangent step if the
 * configuration asks for it.
 *
 * # Safety
 * `sampler` must be a live handle.
 */
enum PwStatus pw_sampler_init(struct PwSampler *sampler);

/**
 * Advance `steps` Metropolis–Hastings transitions. `accepted` (optional)
 * receives how many of them were accepted.
 *
 * # Safety
 * `sampler` must be a live handle; `accepted` must be null or valid.
 */
enum PwStatus pw_sampler_step(struct PwSampler *sampler, size_t steps, size_t *accepted);

/**
 * Observable value at the current point.
 *
 * # Safety
 * `sampler` must be a live handle and `value` valid.
 */
enum PwStatus pw_sampler_value(const struct PwSampler *sampler, double *value);

/**
 * Shape of the model: noise dimension, state dimension and time steps.
 *
 * # Safety
 * `sampler` must be a live handle; each output must be null or valid.
 */
enum PwStatus pw_sampler_shape(const struct PwSampler *sampler,
                               size_t *noise_dim,
                               size_t *state_dim,
                               size_t *steps);

/**
 * Copy the standardized noise `z` (row-major, `steps x noise_dim`) into
 * `buf`. `written` receives the required length even when `len` is short.
 *
 * # Safety
 * `sampler` must be a live handle, `buf` must hold `len` doubles, and
 * `written` must be null or valid.
 */
enum PwStatus pw_sampler_copy_noise(const struct PwSampler *sampler,
                                    double *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Copy the state path (row-major, `(steps + 1) x state_dim`) into `buf`.
 *
 * # Safety
 * As for [`pw_sampler_copy_noise`].
 */
enum PwStatus pw_sampler_copy_path(const struct PwSampler *sampler,
                                   double *buf,
                                   size_t len,
                                   size_t *written);

/**
 * Counters accumulated over all [`pw_sampler_step`] calls.
 *
 * # Safety
 * `sampler` must be a live handle and `stats` valid.
 */
enum PwStatus pw_sampler_stats(const struct PwSampler *sampler, struct PwStats *stats);

/**
 * Adjoint against central-difference gradients for the model and observable
 * of a configuration at `steps` time steps (0 keeps the configured value).
 * `max_discrepancy` receives the largest relative error over `trials` draws.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `max_discrepancy` valid.
 */
enum PwStatus pw_gradient_check(const char *toml,
                                size_t steps,
                                size_t trials,
                                uint64_t seed,
                                double *max_discrepancy);

/**
 * CDF of the range of a standard Brownian bridge, series truncated at
 * `k_max` terms. Returns NaN for NaN input.
 */
double pw_analytic_range_cdf(double x, size_t k_max);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATHWALK_H */
