#ifndef KALMAN_INVERSION_H
#define KALMAN_INVERSION_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status returned by every fallible entry point.
 */
typedef enum KiStatus {
  KI_STATUS_OK = 0,
  KI_STATUS_NULL_POINTER = 1,
  KI_STATUS_INVALID_ARGUMENT = 2,
  KI_STATUS_NOT_SPD = 3,
  KI_STATUS_NUMERICAL = 4,
  KI_STATUS_UNSUPPORTED = 5,
  KI_STATUS_FORWARD_FAILED = 6,
  KI_STATUS_IO = 7,
  KI_STATUS_BUFFER_TOO_SMALL = 8,
  KI_STATUS_PANIC = 9,
} KiStatus;

/**
 * Inversion methods. Values outside this enum are undefined behaviour.
 */
typedef enum KiMethod {
  KI_METHOD_UKI1 = 0,
  KI_METHOD_UKI2 = 1,
  KI_METHOD_EKI = 2,
  KI_METHOD_EAKI = 3,
  KI_METHOD_ETKI = 4,
  KI_METHOD_IUKF1 = 5,
  KI_METHOD_IUKF2 = 6,
  KI_METHOD_IENKF = 7,
  KI_METHOD_IEAKF = 8,
  KI_METHOD_IETKF = 9,
  KI_METHOD_RWM = 10,
  KI_METHOD_PCN = 11,
} KiMethod;

/**
 * Opaque inverse problem handle.
 */
typedef struct KiProblem KiProblem;

/**
 * Opaque result handle.
 */
typedef struct KiResult KiResult;

/**
 * Forward model callback: write `G(theta)` (`n_obs` values) into `out` and
 * return 0, or return nonzero on failure. It may be called concurrently from
 * several threads unless runs are restricted to one thread.
 */
typedef int32_t (*KiForwardFn)(void *user_data,
                               const double *theta,
                               size_t n_params,
                               double *out,
                               size_t n_obs);

/**
 * Run options; start from `ki_run_options_default()`.
 */
typedef struct KiRunOptions {
  enum KiMethod method;
  /**
   * Mean-field `γ`.
   */
  double gamma;
  /**
   * Mean-field iterations.
   */
  size_t iterations;
  /**
   * Particles for ensemble methods.
   */
  size_t ensemble_size;
  uint64_t seed;
  /**
   * Transport step size; 0 selects the default.
   */
  double dt;
  /**
   * Moment-correct the initial ensemble: 1 yes, 0 no, -1 method default.
   */
  int32_t exact_init;
  /**
   * Worker threads; 0 uses the global pool.
   */
  size_t threads;
  size_t n_samples;
  size_t burn_in;
  /**
   * RWM step or pCN `β`; 0 selects the sampler default.
   */
  double step_size;
  /**
   * Record errors against the closed-form posterior (affine problems).
   */
  bool analytic_reference;
} KiRunOptions;

/**
 * Diagnostics of one iteration; unavailable errors are NaN.
 */
typedef struct KiIterationRecord {
  size_t iter;
  double mean_rel_err;
  double cov_rel_err;
  double opt_err;
  size_t fwd_evals;
  double wall_ms;
} KiIterationRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length including the NUL,
 * or 0 when there is no error. Passing a null `buf` only queries the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ki_last_error_message(char *buf, size_t len);

/**
 * Linear problem `y = Gθ + η`. All matrices are row-major; `g` is
 * `n_obs × n_params`.
 *
 * # Safety
 * Every pointer must be valid for the stated number of `f64`s; `out` must
 * be writable.
 */
enum KiStatus ki_problem_linear(const double *g,
                                size_t n_obs,
                                size_t n_params,
                                const double *y,
                                const double *noise_cov,
                                const double *prior_mean,
                                const double *prior_cov,
                                struct KiProblem **out);

/**
 * One of the built-in benchmark problems by name (`linear-over`,
 * `linear-under`, `elliptic-well`, `elliptic-under`, `hilbert`, `darcy`).
 * `dim` sets the Hilbert dimension or number of Darcy modes and `grid` the
 * Darcy mesh; pass 0 for the defaults.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum KiStatus ki_problem_builtin(const char *name,
                                 size_t dim,
                                 size_t grid,
                                 uint64_t data_seed,
                                 struct KiProblem **out);

/**
 * Problem whose forward map is a caller-supplied function.
 *
 * # Safety
 * As for [`ki_problem_linear`]; additionally `forward` and `user_data`
 * must stay valid for the lifetime of the returned handle.
 */
enum KiStatus ki_problem_callback(KiForwardFn forward,
                                  void *user_data,
                                  size_t n_params,
                                  size_t n_obs,
                                  const double *y,
                                  const double *noise_cov,
                                  const double *prior_mean,
                                  const double *prior_cov,
                                  struct KiProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from a `ki_problem_*` constructor that
 * has not been freed.
 */
void ki_problem_free(struct KiProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle; the outputs must be null or writable.
 */
enum KiStatus ki_problem_dims(const struct KiProblem *problem, size_t *n_params, size_t *n_obs);

/**
 * Closed-form posterior of an affine problem: mean into `mean` (`n_params`
 * values) and row-major covariance into `cov` (`n_params²` values).
 *
 * # Safety
 * `problem` must be a live handle; the buffers must be valid for the
 * stated lengths.
 */
enum KiStatus ki_problem_analytic_posterior(const struct KiProblem *problem,
                                            double *mean,
                                            size_t mean_len,
                                            double *cov,
                                            size_t cov_len);

struct KiRunOptions ki_run_options_default(void);

/**
 * Run one method. On success `*out` receives a result handle; a run that
 * diverged still succeeds and reports it through `ki_result_diverged`.
 *
 * # Safety
 * `problem` must be a live handle, `options` null (defaults) or valid, and
 * `out` writable.
 */
enum KiStatus ki_run(const struct KiProblem *problem,
                     const struct KiRunOptions *options,
                     struct KiResult **out);

/**
 * # Safety
 * `result` must be null or a live handle from `ki_run`.
 */
void ki_result_free(struct KiResult *result);

/**
 * Parameter dimension, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ki_result_dim(const struct KiResult *result);

/**
 * Completed iterations (1 for samplers), or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ki_result_iterations(const struct KiResult *result);

/**
 * Total forward evaluations, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ki_result_fwd_evals(const struct KiResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
bool ki_result_diverged(const struct KiResult *result);

/**
 * Sampler acceptance rate; NaN for other methods or a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double ki_result_acceptance_rate(const struct KiResult *result);

/**
 * # Safety
 * `result` must be a live handle; `mean` valid for `len` values.
 */
enum KiStatus ki_result_mean(const struct KiResult *result, double *mean, size_t len);

/**
 * Row-major covariance.
 *
 * # Safety
 * `result` must be a live handle; `cov` valid for `len` values.
 */
enum KiStatus ki_result_covariance(const struct KiResult *result, double *cov, size_t len);

/**
 * Number of history records, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t ki_result_history_len(const struct KiResult *result);

/**
 * # Safety
 * `result` must be a live handle; `records` valid for `len` entries.
 */
enum KiStatus ki_result_history(const struct KiResult *result,
                                struct KiIterationRecord *records,
                                size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ki_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KALMAN_INVERSION_H */
