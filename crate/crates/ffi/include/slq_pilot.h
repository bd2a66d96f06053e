/* C interface to the slq-pilot stochastic LQ solvers. */

#ifndef SLQ_PILOT_H
#define SLQ_PILOT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this ABI.
typedef enum SlqStatus {
  // Success.
  SLQ_STATUS_OK = 0,
  // A required pointer argument was null.
  SLQ_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  SLQ_STATUS_INVALID_UTF8 = 2,
  // File could not be read or written.
  SLQ_STATUS_IO = 3,
  // Configuration text failed to parse.
  SLQ_STATUS_PARSE = 4,
  // Configuration parsed but failed validation.
  SLQ_STATUS_VALIDATION = 5,
  // Collected data cannot identify a unique solution.
  SLQ_STATUS_RANK_DEFICIENT = 6,
  // Iteration cap reached before the tolerance.
  SLQ_STATUS_NOT_CONVERGED = 7,
  // Numerical breakdown inside a solver.
  SLQ_STATUS_NUMERICAL = 8,
  // A destination buffer had the wrong length.
  SLQ_STATUS_BUFFER_SIZE = 9,
  // Unexpected internal failure (panic caught at the boundary).
  SLQ_STATUS_INTERNAL = 10,
} SlqStatus;

// Opaque: a fully validated run configuration.
typedef struct SlqConfig SlqConfig;

// Opaque: the outcome of one solver run.
typedef struct SlqSolution SlqSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads and validates a TOML run configuration from a file path.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer; the
// returned handle must be released with [`slq_config_free`].
enum SlqStatus slq_config_load(const char *path, struct SlqConfig **out);

// Loads and validates a configuration from TOML text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer; the
// returned handle must be released with [`slq_config_free`].
enum SlqStatus slq_config_load_str(const char *text, struct SlqConfig **out);

// Releases a configuration handle. Null is a no-op.
//
// # Safety
// `cfg` must have come from a load call and not been freed before.
void slq_config_free(struct SlqConfig *cfg);

// State dimension `n`, or 0 when `cfg` is null.
//
// # Safety
// `cfg` must be a live handle or null.
size_t slq_config_state_dim(const struct SlqConfig *cfg);

// Input dimension `m`, or 0 when `cfg` is null.
//
// # Safety
// `cfg` must be a live handle or null.
size_t slq_config_input_dim(const struct SlqConfig *cfg);

// Overrides the Monte-Carlo seed.
//
// # Safety
// `cfg` must be a live handle.
enum SlqStatus slq_config_set_seed(struct SlqConfig *cfg, uint64_t seed);

// Overrides the Monte-Carlo path count (must be at least 1).
//
// # Safety
// `cfg` must be a live handle.
enum SlqStatus slq_config_set_paths(struct SlqConfig *cfg, size_t paths);

// Runs model-based policy iteration on a loaded configuration.
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer; the returned
// handle must be released with [`slq_solution_free`].
enum SlqStatus slq_solve_oracle(const struct SlqConfig *cfg, struct SlqSolution **out);

// Simulates the configured ensemble, accumulates the data matrices and
// runs the data-driven policy iteration.
//
// # Safety
// `cfg` must be a live handle and `out` a valid pointer; the returned
// handle must be released with [`slq_solution_free`].
enum SlqStatus slq_solve_data_driven(const struct SlqConfig *cfg, struct SlqSolution **out);

// Releases a solution handle. Null is a no-op.
//
// # Safety
// `solution` must have come from a solve call and not been freed before.
void slq_solution_free(struct SlqSolution *solution);

// Iterations until the stopping rule fired; 0 when `solution` is null.
//
// # Safety
// `solution` must be a live handle or null.
size_t slq_solution_iterations(const struct SlqSolution *solution);

// Whether the stopping tolerance was met.
//
// # Safety
// `solution` must be a live handle or null.
bool slq_solution_converged(const struct SlqSolution *solution);

// Frobenius norm of the Riccati residual at the solution pair; NaN when
// `solution` is null.
//
// # Safety
// `solution` must be a live handle or null.
double slq_solution_residual(const struct SlqSolution *solution);

// Copies the value matrix `P` into `buf`, row-major; `len` must equal
// `n * n` (see [`slq_config_state_dim`]).
//
// # Safety
// `solution` must be a live handle; `buf` must point to `len` doubles.
enum SlqStatus slq_solution_value_matrix(const struct SlqSolution *solution,
                                         double *buf,
                                         size_t len);

// Copies the feedback gain `K` into `buf`, row-major; `len` must equal
// `m * n`.
//
// # Safety
// `solution` must be a live handle; `buf` must point to `len` doubles.
enum SlqStatus slq_solution_gain(const struct SlqSolution *solution, double *buf, size_t len);

// Message for the most recent failure on this thread; empty string when
// nothing failed yet. Valid until the next failing call on this thread.
const char *slq_last_error_message(void);

// Crate version as a static NUL-terminated string.
const char *slq_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLQ_PILOT_H */
