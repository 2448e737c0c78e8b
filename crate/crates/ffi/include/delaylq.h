#ifndef DELAYLQ_H
#define DELAYLQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which LMI certificate [`dlq_certify`] checks.
 */
#define DLQ_CERT_STABILIZABILITY 0

#define DLQ_CERT_DETECTABILITY 1

#define DLQ_CERT_DELAY_INDEPENDENT 2

/**
 * Result codes.
 */
typedef enum DlqStatus {
  DLQ_OK = 0,
  DLQ_ERR_NULL = 1,
  DLQ_ERR_UTF8 = 2,
  DLQ_ERR_CONFIG = 3,
  /**
   * Certificate not found within the iteration budget.
   */
  DLQ_ERR_INFEASIBLE = 4,
  /**
   * Riccati iteration did not converge.
   */
  DLQ_ERR_NOT_CONVERGED = 5,
  DLQ_ERR_DIMENSION = 6,
  DLQ_ERR_BUFFER_TOO_SMALL = 7,
  DLQ_ERR_INVALID_ARGUMENT = 8,
  DLQ_ERR_INTERNAL = 9,
  DLQ_ERR_PANIC = 10,
} DlqStatus;

/**
 * Parsed scenario (opaque).
 */
typedef struct DlqScenario DlqScenario;

/**
 * Converged Riccati synthesis (opaque).
 */
typedef struct DlqSynthesis DlqSynthesis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlq_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next `dlq_*` call on the same thread.
 */
const char *dlq_last_error(void);

/**
 * Parses a scenario JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DlqStatus dlq_scenario_from_json(const char *json, struct DlqScenario **out);

/**
 * Releases a scenario; null is ignored.
 *
 * # Safety
 * `s` must come from [`dlq_scenario_from_json`] and not be used afterwards.
 */
void dlq_scenario_free(struct DlqScenario *s);

/**
 * State dimension `n`, input dimension `m` and delay order `p`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DlqStatus dlq_scenario_dims(const struct DlqScenario *s, size_t *n, size_t *m, size_t *p);

/**
 * Writes `A(τ)` (`(n+m)×(n+m)`) and `B(τ)` (`(n+m)×m`) row-major.
 *
 * # Safety
 * `a_out` and `b_out` must hold `a_len` and `b_len` doubles.
 */
enum DlqStatus dlq_discretize(const struct DlqScenario *s,
                              double tau,
                              double *a_out,
                              size_t a_len,
                              double *b_out,
                              size_t b_len);

/**
 * Runs one certificate on the `r`-grid with the scenario's settings.
 * `feasible` receives 1 or 0 and `margin` the rechecked margin; a solve that
 * ran but found no certificate returns [`DlqStatus::DlqErrInfeasible`].
 *
 * # Safety
 * All pointers must be valid.
 */
enum DlqStatus dlq_certify(const struct DlqScenario *s,
                           int32_t which,
                           size_t r,
                           int32_t *feasible,
                           double *margin);

/**
 * Riccati synthesis on the `r`-grid (`r = 0` uses the scenario's value).
 * Non-convergence returns [`DlqStatus::DlqErrNotConverged`] and no handle.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
enum DlqStatus dlq_synthesize(const struct DlqScenario *s, size_t r, struct DlqSynthesis **out);

/**
 * Releases a synthesis; null is ignored.
 *
 * # Safety
 * `s` must come from [`dlq_synthesize`] and not be used afterwards.
 */
void dlq_synthesis_free(struct DlqSynthesis *s);

/**
 * Number of boxes, Riccati iterations, closed-loop surrogate and the
 * predicted optimal cost for the scenario's initial distribution.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DlqStatus dlq_synthesis_info(const struct DlqSynthesis *s,
                                  size_t *boxes,
                                  size_t *iterations,
                                  double *surrogate,
                                  double *predicted_cost);

/**
 * Original-coordinate gain `K_orig(φ)` (`m×(n+m)`, row-major) of the box containing `φ`.
 *
 * # Safety
 * `phi` must hold `phi_len` doubles and `out` `out_len` doubles.
 */
enum DlqStatus dlq_synthesis_gain(const struct DlqSynthesis *s,
                                  const double *phi,
                                  size_t phi_len,
                                  double *out,
                                  size_t out_len);

/**
 * Serializes the gain file (the format the `simulate` command reads) into
 * `buf` with a trailing NUL. `needed` receives the required size including
 * the NUL; call with `buf_len = 0` to query it.
 *
 * # Safety
 * `buf` must hold `buf_len` bytes (may be null when `buf_len` is 0).
 */
enum DlqStatus dlq_synthesis_to_json(const struct DlqSynthesis *s,
                                     char *buf,
                                     size_t buf_len,
                                     size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAYLQ_H */
