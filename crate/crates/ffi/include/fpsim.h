#ifndef FPSIM_H
#define FPSIM_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpsimStatus {
  FPSIM_STATUS_OK = 0,
  FPSIM_STATUS_NULL_POINTER = 1,
  FPSIM_STATUS_INVALID_ARGUMENT = 2,
  FPSIM_STATUS_INVALID_UTF8 = 3,
  FPSIM_STATUS_NUMERICAL = 4,
  FPSIM_STATUS_BUDGET = 5,
  FPSIM_STATUS_PARSE = 6,
  FPSIM_STATUS_IO = 7,
  FPSIM_STATUS_PANIC = 8,
} FpsimStatus;

typedef enum FpsimOracleMode {
  FPSIM_ORACLE_MODE_EXACT = 0,
  FPSIM_ORACLE_MODE_PEA = 1,
  FPSIM_ORACLE_MODE_PEA_BOOSTED = 2,
} FpsimOracleMode;

/**
 * Opaque problem handle.
 */
typedef struct FpsimProblem FpsimProblem;

/**
 * Run parameters. `ancilla_qubits`, `boost_q` and `boost_q_prime` are read
 * only by the modes that need them. `max_restarts = 0` means a failed step
 * ends the run.
 */
typedef struct FpsimRunConfig {
  size_t m;
  uint32_t fpqs_level;
  enum FpsimOracleMode oracle_mode;
  uint32_t ancilla_qubits;
  uint64_t boost_q;
  uint64_t boost_q_prime;
  size_t anchor_repeats;
  uint32_t max_restarts;
  uint64_t seed;
} FpsimRunConfig;

typedef struct FpsimRunSummary {
  bool success;
  bool completed;
  double final_fidelity;
  uint64_t u_applications;
  uint64_t oracle_queries;
  uint64_t measurements;
  uint64_t pea_runs;
  uint64_t restarts;
} FpsimRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *fpsim_last_error_message(void);

/**
 * Static, NUL-terminated version string.
 */
const char *fpsim_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void fpsim_string_free(char *s);

/**
 * Grover search over `2^n_qubits` items; `seed` picks the marked item.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_grover(uint32_t n_qubits, uint64_t seed, struct FpsimProblem **out);

/**
 * Random GUE pair of dimension `dim` with minimum gap at least `min_gap_floor`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_random(size_t dim,
                                      double min_gap_floor,
                                      uint64_t seed,
                                      struct FpsimProblem **out);

/**
 * Two-level avoided crossing with minimum gap `gap`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_two_level(double gap, struct FpsimProblem **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_from_json(const char *json, struct FpsimProblem **out);

/**
 * Serializes a problem; free the result with [`fpsim_string_free`].
 *
 * # Safety
 * `p` must be a live problem handle; `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_to_json(const struct FpsimProblem *p, char **out);

/**
 * # Safety
 * `p` must be null or a handle from this library, not yet freed.
 */
void fpsim_problem_free(struct FpsimProblem *p);

/**
 * # Safety
 * `p` must be a live problem handle; `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_dim(const struct FpsimProblem *p, size_t *out);

/**
 * `Gamma = |H0| + |H1|`.
 *
 * # Safety
 * `p` must be a live problem handle; `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_gamma(const struct FpsimProblem *p, double *out);

/**
 * # Safety
 * `p` must be a live problem handle; `out` must be valid for writes.
 */
enum FpsimStatus fpsim_problem_min_gap(const struct FpsimProblem *p, double *out);

/**
 * Exact oracle, level 1, no restarts, default anchor repeats.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FpsimStatus fpsim_run_config_default(size_t m, uint64_t seed, struct FpsimRunConfig *out);

/**
 * One seeded run of the adiabatic schedule.
 *
 * # Safety
 * `p` must be a live problem handle, `config` readable and `out` writable.
 */
enum FpsimStatus fpsim_run(const struct FpsimProblem *p,
                           const struct FpsimRunConfig *config,
                           struct FpsimRunSummary *out);

/**
 * Token string of `V_level` in application order (`A`, `B`, `a`, `b`).
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FpsimStatus fpsim_sequence(uint32_t level, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPSIM_H */
