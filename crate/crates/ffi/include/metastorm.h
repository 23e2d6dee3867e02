/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef METASTORM_H
#define METASTORM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_INVALID_ARGUMENT = 1,
  MS_STATUS_CONFIG = 2,
  MS_STATUS_DIVERGED = 3,
  MS_STATUS_VERIFICATION = 4,
  MS_STATUS_IO = 5,
  MS_STATUS_NULL_POINTER = 6,
  MS_STATUS_PANIC = 7,
} MsStatus;

/**
 * Algorithm selector.
 */
typedef enum MsAlgorithm {
  MS_ALGORITHM_META_STORM = 0,
  MS_ALGORITHM_META_STORM_SG = 1,
  MS_ALGORITHM_META_STORM_NA = 2,
  MS_ALGORITHM_META_STORM_H = 3,
  MS_ALGORITHM_META_STORM_SG_H = 4,
  MS_ALGORITHM_STORM_PLUS = 5,
  MS_ALGORITHM_SGD = 6,
  MS_ALGORITHM_ADA_GRAD_NORM = 7,
  MS_ALGORITHM_ORACLE_STORM = 8,
} MsAlgorithm;

/**
 * Opaque optimizer handle. Owns a copy of its problem.
 */
typedef struct MsOptimizer MsOptimizer;

/**
 * Opaque problem handle.
 */
typedef struct MsProblem MsProblem;

/**
 * Hyperparameters. `q` is derived from `p` and not part of the struct.
 */
typedef struct MsHyperParams {
  double a0;
  double b0;
  double eta;
  double p;
  double alpha;
} MsHyperParams;

/**
 * Telemetry of one optimizer step. Optional quantities are NaN when absent.
 */
typedef struct MsStepReport {
  uint64_t t;
  double a_next;
  double a_for_b;
  double b;
  double d_norm;
  uint32_t queries;
  double momentum_term;
  double grad_sample_sq;
  double grad_diff_sq;
} MsStepReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The string
 * stays valid until the next failing call on the same thread.
 */
const char *ms_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Quadratic `1/2 x^T diag(spectrum) x` with additive Gaussian gradient
 * noise of per-coordinate scale `noise`.
 *
 * # Safety
 * `spectrum` must point to `dim` readable doubles; `out` must be writable.
 */
enum MsStatus ms_problem_noisy_quadratic(const double *spectrum,
                                         size_t dim,
                                         double noise,
                                         struct MsProblem **out);

/**
 * Synthetic row-sampled least squares.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_problem_least_squares(size_t dim,
                                       size_t rows,
                                       double noise,
                                       uint64_t data_seed,
                                       struct MsProblem **out);

/**
 * Synthetic logistic regression with the bounded non-convex regulariser.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_problem_logistic(size_t dim,
                                  size_t samples,
                                  double flip_prob,
                                  double reg,
                                  uint64_t data_seed,
                                  struct MsProblem **out);

/**
 * Builds a problem from the TOML table used in experiment configs, e.g.
 * `family = "logistic"\ndim = 5`.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string; `out` must be writable.
 */
enum MsStatus ms_problem_from_toml(const char *toml_text, struct MsProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from an `ms_problem_*` constructor
 * that has not been freed.
 */
void ms_problem_free(struct MsProblem *problem);

/**
 * Dimension of the problem, 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t ms_problem_dim(const struct MsProblem *problem);

/**
 * Smoothness and noise constants. `f_star` receives NaN when unknown.
 *
 * # Safety
 * `problem` must be a live handle; the outputs must be writable.
 */
enum MsStatus ms_problem_constants(const struct MsProblem *problem,
                                   double *beta,
                                   double *sigma,
                                   double *f_star);

/**
 * Stochastic gradient at `x` for the sample keyed by
 * `(run_seed, draw_index)`. Pure in its arguments.
 *
 * # Safety
 * `x` and `grad` must each point to `dim` doubles.
 */
enum MsStatus ms_problem_grad_stochastic(const struct MsProblem *problem,
                                         const double *x,
                                         size_t dim,
                                         uint64_t run_seed,
                                         uint64_t draw_index,
                                         double *grad);

/**
 * Exact gradient of the expected objective.
 *
 * # Safety
 * `x` and `grad` must each point to `dim` doubles.
 */
enum MsStatus ms_problem_grad_true(const struct MsProblem *problem,
                                   const double *x,
                                   size_t dim,
                                   double *grad);

/**
 * Exact objective value.
 *
 * # Safety
 * `x` must point to `dim` doubles; `value` must be writable.
 */
enum MsStatus ms_problem_value(const struct MsProblem *problem,
                               const double *x,
                               size_t dim,
                               double *value);

/**
 * Parses a kebab-case algorithm name such as `meta-storm-sg`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum MsStatus ms_algorithm_from_name(const char *name, enum MsAlgorithm *out);

/**
 * Default hyperparameters of `algorithm` for a problem of size `dim`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_hyper_preset(enum MsAlgorithm algorithm, size_t dim, struct MsHyperParams *out);

/**
 * Validates hyperparameters for `algorithm`. On failure the message lists
 * every violated constraint.
 *
 * # Safety
 * `hp` must point to a readable struct.
 */
enum MsStatus ms_hyper_validate(enum MsAlgorithm algorithm, const struct MsHyperParams *hp);

/**
 * Creates an optimizer at `x1`. `horizon` is the planned number of
 * iterates (used by oracle-tuned STORM only). The problem is copied.
 *
 * # Safety
 * `problem` must be a live handle, `hp` readable, `x1` must point to `dim`
 * doubles and `out` must be writable.
 */
enum MsStatus ms_optimizer_new(const struct MsProblem *problem,
                               enum MsAlgorithm algorithm,
                               const struct MsHyperParams *hp,
                               const double *x1,
                               size_t dim,
                               uint64_t run_seed,
                               uint64_t horizon,
                               struct MsOptimizer **out);

/**
 * # Safety
 * `optimizer` must be null or a live handle.
 */
void ms_optimizer_free(struct MsOptimizer *optimizer);

/**
 * Executes one iteration. `report` may be null. Returns
 * `MS_STATUS_DIVERGED` and leaves the state unchanged if a non-finite
 * value appears.
 *
 * # Safety
 * `optimizer` must be a live handle; `report` null or writable.
 */
enum MsStatus ms_optimizer_step(struct MsOptimizer *optimizer, struct MsStepReport *report);

/**
 * Copies the current iterate into `x`.
 *
 * # Safety
 * `optimizer` must be a live handle; `x` must point to `dim` doubles.
 */
enum MsStatus ms_optimizer_x(const struct MsOptimizer *optimizer, double *x, size_t dim);

/**
 * Copies the current estimator `d_t` into `d`.
 *
 * # Safety
 * `optimizer` must be a live handle; `d` must point to `dim` doubles.
 */
enum MsStatus ms_optimizer_d(const struct MsOptimizer *optimizer, double *d, size_t dim);

/**
 * Current round `t` (1 before the first step), 0 for a null handle.
 *
 * # Safety
 * `optimizer` must be null or a live handle.
 */
uint64_t ms_optimizer_t(const struct MsOptimizer *optimizer);

/**
 * Oracle calls made so far, 0 for a null handle.
 *
 * # Safety
 * `optimizer` must be null or a live handle.
 */
uint64_t ms_optimizer_queries(const struct MsOptimizer *optimizer);

/**
 * `a_{t+1} = (1 + grad_sq_sum / a0^2)^{-2/3}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_momentum_sg(double grad_sq_sum, double a0, double *out);

/**
 * Same form as [`ms_momentum_sg`], over squared gradient differences.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_momentum_ms(double diff_sq_sum, double a0, double *out);

/**
 * `a_{t+1} = (1 + t / a0^2)^{-2/3}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_momentum_na(uint64_t t, double a0, double *out);

/**
 * `b = (b0^{1/p} + d_sq_sum)^p / a^{(1-p)/2}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_stepsize(double d_sq_sum, double a, double b0, double p, double *out);

/**
 * Fixed STORM constants tuned from the true problem parameters.
 *
 * # Safety
 * `a` and `b` must be writable.
 */
enum MsStatus ms_oracle_constants(double beta,
                                  double sigma,
                                  uint64_t horizon,
                                  double delta_f,
                                  double *a,
                                  double *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASTORM_H */
