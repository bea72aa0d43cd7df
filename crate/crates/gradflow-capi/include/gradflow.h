#ifndef GRADFLOW_H
#define GRADFLOW_H

/* Generated by cbindgen from gradflow-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Step-size policy.
 */
typedef enum GfDtPolicy {
  GF_DT_POLICY_FIXED = 0,
  GF_DT_POLICY_ADAPTIVE = 1,
} GfDtPolicy;

/**
 * Terminal state of a run.
 */
typedef enum GfRunStatus {
  GF_RUN_STATUS_CONVERGED = 0,
  GF_RUN_STATUS_MAX_ITERATIONS = 1,
  GF_RUN_STATUS_STALLED = 2,
} GfRunStatus;

/**
 * Solver selector mirroring the CLI kinds.
 */
typedef enum GfSolverKind {
  GF_SOLVER_KIND_OPI = 0,
  GF_SOLVER_KIND_MIDPOINT = 1,
  GF_SOLVER_KIND_RETRACTION = 2,
} GfSolverKind;

/**
 * Status code of every fallible call.
 */
typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_ARGUMENT = 1,
  GF_STATUS_INVALID_ARGUMENT = 2,
  GF_STATUS_MODEL_ERROR = 3,
  GF_STATUS_SOLVER_ERROR = 4,
  GF_STATUS_OUT_OF_RANGE = 5,
  GF_STATUS_PANIC = 6,
} GfStatus;

/**
 * Opaque energy model handle.
 */
typedef struct GfModel GfModel;

/**
 * Opaque run-result handle.
 */
typedef struct GfRunResult GfRunResult;

/**
 * Point nucleus of the softened external potential.
 */
typedef struct GfNucleus {
  double charge;
  double position;
} GfNucleus;

/**
 * Plain-old-data solver configuration; build with
 * [`gf_solver_options_default`] and adjust fields as needed.
 */
typedef struct GfSolverOptions {
  enum GfSolverKind kind;
  double dt;
  enum GfDtPolicy dt_policy;
  double dt_min;
  double dt_max;
  double epsilon;
  size_t max_outer;
  /**
   * Inner pass count (orthogonality preserving iteration).
   */
  size_t p;
  /**
   * Inner fixed-point tolerance (midpoint).
   */
  double tol;
  /**
   * Inner iteration cap (midpoint).
   */
  size_t max_inner;
} GfSolverOptions;

/**
 * One accepted outer iteration of a run trace.
 */
typedef struct GfTraceRow {
  size_t iter;
  double sim_time;
  double energy;
  double grad_norm;
  double orth_error;
  double half_spec_min;
  double half_spec_max;
  double dt;
  size_t inner_iters;
} GfTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gf_version(void);

/**
 * Origin that centers an `n`-point grid of the given spacing on zero.
 */
double gf_centered_origin(size_t grid_points, double spacing);

/**
 * Quadratic (linear eigenvalue) model with a softened nuclear potential.
 *
 * # Safety
 * `nuclei` must point to `nuclei_len` readable elements (or be NULL when
 * `nuclei_len == 0`) and `out` must be a valid destination pointer.
 */
enum GfStatus gf_model_quadratic_new(size_t grid_points,
                                     double spacing,
                                     double origin,
                                     size_t orbitals,
                                     const struct GfNucleus *nuclei,
                                     size_t nuclei_len,
                                     double soft_core,
                                     struct GfModel **out);

/**
 * Kohn-Sham model: softened nuclear attraction, Hartree repulsion, LDA
 * exchange and optional LDA correlation.
 *
 * # Safety
 * As [`gf_model_quadratic_new`].
 */
enum GfStatus gf_model_kohn_sham_new(size_t grid_points,
                                     double spacing,
                                     double origin,
                                     size_t orbitals,
                                     const struct GfNucleus *nuclei,
                                     size_t nuclei_len,
                                     double soft_core,
                                     double hartree_soft_core,
                                     double hartree_scale,
                                     bool correlation,
                                     struct GfModel **out);

/**
 * Releases a model handle. NULL is accepted.
 *
 * # Safety
 * `model` must come from a `gf_model_*_new` call and not be freed twice.
 */
void gf_model_free(struct GfModel *model);

/**
 * Baseline options: adaptive step policy, derived step bounds, 10000 outer
 * iterations, p = 2 inner passes, 1e-10 inner tolerance.
 */
struct GfSolverOptions gf_solver_options_default(enum GfSolverKind kind, double dt, double epsilon);

/**
 * Runs a solver from a seeded random orthonormal frame.
 *
 * # Safety
 * `model` and `options` must be valid pointers; `out` must be a valid
 * destination pointer. The returned handle must be released with
 * [`gf_result_free`].
 */
enum GfStatus gf_run(const struct GfModel *model,
                     const struct GfSolverOptions *options,
                     uint64_t seed,
                     struct GfRunResult **out);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
enum GfRunStatus gf_result_status(const struct GfRunResult *result);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
size_t gf_result_iterations(const struct GfRunResult *result);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
size_t gf_result_rejected_steps(const struct GfRunResult *result);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
double gf_result_final_energy(const struct GfRunResult *result);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
double gf_result_final_grad_norm(const struct GfRunResult *result);

/**
 * # Safety
 * `result` must be a live handle from [`gf_run`].
 */
size_t gf_result_trace_len(const struct GfRunResult *result);

/**
 * Copies trace row `index` into `*row`.
 *
 * # Safety
 * `result` must be a live handle and `row` a valid destination pointer.
 */
enum GfStatus gf_result_trace_row(const struct GfRunResult *result,
                                  size_t index,
                                  struct GfTraceRow *row);

/**
 * Releases a run-result handle. NULL is accepted.
 *
 * # Safety
 * `result` must come from [`gf_run`] and not be freed twice.
 */
void gf_result_free(struct GfRunResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADFLOW_H */
