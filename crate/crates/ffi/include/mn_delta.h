#ifndef MN_DELTA_H
#define MN_DELTA_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MnStatus {
  MN_STATUS_OK = 0,
  MN_STATUS_NULL_POINTER = 1,
  MN_STATUS_INVALID_ARGUMENT = 2,
  MN_STATUS_SHAPE_MISMATCH = 3,
  MN_STATUS_INVALID_DATA = 4,
  MN_STATUS_INFEASIBLE = 5,
  MN_STATUS_NUMERIC = 6,
  MN_STATUS_IO = 7,
  MN_STATUS_PANIC = 8,
} MnStatus;

/**
 * Bivariate feature used by KLIEP.
 */
typedef enum MnFeature {
  MN_FEATURE_PRODUCT = 0,
  MN_FEATURE_RBF = 1,
} MnFeature;

/**
 * Samples-by-variables data matrix.
 */
typedef struct MnDataset MnDataset;

/**
 * Estimated change: one coefficient per edge `(u, v)`, `u >= v`, 0-based.
 */
typedef struct MnSolution MnSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mn_version(void);

/**
 * Copies an `n x m` row-major matrix into a new dataset.
 *
 * # Safety
 * `values` must point to `n * m` readable doubles; `out` must be writable.
 */
enum MnStatus mn_dataset_new(const double *values, size_t n, size_t m, struct MnDataset **out);

/**
 * Reads a headerless numeric CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MnStatus mn_dataset_read_csv(const char *path, struct MnDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library that was not yet freed.
 */
void mn_dataset_free(struct MnDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t mn_dataset_rows(const struct MnDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t mn_dataset_cols(const struct MnDataset *ds);

/**
 * Smallest `lambda` at which the KLIEP estimate is exactly zero.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MnStatus mn_kliep_lambda_max(const struct MnDataset *xp,
                                  const struct MnDataset *xq,
                                  enum MnFeature feature,
                                  double bandwidth,
                                  double *out);

/**
 * Group-lasso KLIEP over all pairs `u >= v`. `max_iterations = 0` and
 * `tolerance <= 0` select the defaults.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MnStatus mn_kliep_solve(const struct MnDataset *xp,
                             const struct MnDataset *xq,
                             enum MnFeature feature,
                             double bandwidth,
                             double lambda,
                             size_t max_iterations,
                             double tolerance,
                             struct MnSolution **out);

/**
 * Covariance-precision matching with feasibility slack `epsilon`, entries
 * below `tau` in magnitude zeroed. An estimate that never became feasible
 * is still returned, flagged as not converged.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MnStatus mn_cp_solve(const struct MnDataset *xp,
                          const struct MnDataset *xq,
                          double epsilon,
                          double tau,
                          struct MnSolution **out);

/**
 * # Safety
 * `sol` must be null or a handle from this library that was not yet freed.
 */
void mn_solution_free(struct MnSolution *sol);

/**
 * Number of candidate edges (all pairs `u >= v`).
 *
 * # Safety
 * `sol` must be a live handle.
 */
size_t mn_solution_edge_count(const struct MnSolution *sol);

/**
 * Number of edges with a nonzero coefficient.
 *
 * # Safety
 * `sol` must be a live handle.
 */
size_t mn_solution_active_count(const struct MnSolution *sol);

/**
 * Edge `k` in sorted `(u, v)` order with its coefficient.
 *
 * # Safety
 * `sol` must be a live handle; output pointers must be writable.
 */
enum MnStatus mn_solution_edge(const struct MnSolution *sol,
                               size_t k,
                               size_t *u,
                               size_t *v,
                               double *value);

/**
 * The regularization value the solution was computed at (`tau` for CP).
 *
 * # Safety
 * `sol` must be a live handle.
 */
double mn_solution_lambda(const struct MnSolution *sol);

/**
 * # Safety
 * `sol` must be a live handle.
 */
double mn_solution_objective(const struct MnSolution *sol);

/**
 * # Safety
 * `sol` must be a live handle.
 */
size_t mn_solution_iterations(const struct MnSolution *sol);

/**
 * 1 when the solver met its tolerance, 0 otherwise.
 *
 * # Safety
 * `sol` must be a live handle.
 */
int32_t mn_solution_converged(const struct MnSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MN_DELTA_H */
