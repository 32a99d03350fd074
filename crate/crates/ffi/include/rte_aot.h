#ifndef RTE_AOT_H
#define RTE_AOT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every exported function.
 */
typedef enum RteStatus {
  RTE_STATUS_OK = 0,
  RTE_STATUS_NULL_POINTER = 1,
  RTE_STATUS_INVALID_ARGUMENT = 2,
  RTE_STATUS_CONFIG = 3,
  RTE_STATUS_INADMISSIBLE = 4,
  RTE_STATUS_DOMAIN = 5,
  RTE_STATUS_DIVERGENCE = 6,
  RTE_STATUS_CHECK_FAILED = 7,
  RTE_STATUS_IO = 8,
  RTE_STATUS_PANIC = 9,
} RteStatus;

/**
 * Opaque handle to a validated scenario.
 */
typedef struct RteScenario RteScenario;

/**
 * Admissibility numbers of the scenario medium.
 */
typedef struct RteAdmissibility {
  double rho;
  double tau;
  double tau_rho;
  double sigma_min;
  double contraction_estimate;
} RteAdmissibility;

/**
 * Convergence record of a forward solve.
 */
typedef struct RteDiagnostics {
  size_t terms_used;
  double contraction_observed;
  double tail_bound;
  /**
   * Non-zero when the series hit `j_max` with a large tail.
   */
  int32_t tail_warning;
} RteDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rte_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len − 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rte_last_error_message(char *buf, size_t len);

/**
 * Parses and validates scenario TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RteStatus rte_scenario_from_toml(const char *toml, struct RteScenario **out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RteStatus rte_scenario_from_path(const char *path, struct RteScenario **out);

/**
 * Releases a scenario handle; null is ignored.
 *
 * # Safety
 * `scenario` must come from one of the constructors and not be used afterwards.
 */
void rte_scenario_free(struct RteScenario *scenario);

/**
 * # Safety
 * `scenario` and `out` must be valid pointers.
 */
enum RteStatus rte_scenario_admissibility(const struct RteScenario *scenario,
                                          struct RteAdmissibility *out);

/**
 * Solves the forward problem with the scenario's `f` and writes
 * `u(x_p, θ_a)` to `out[p·n_angles + a]`.
 *
 * # Safety
 * `points` holds `2·n_points` doubles, `angles` holds `n_angles` doubles,
 * `out` has room for `n_points·n_angles` doubles; `diagnostics` may be null.
 */
enum RteStatus rte_forward(const struct RteScenario *scenario,
                           const double *points,
                           size_t n_points,
                           const double *angles,
                           size_t n_angles,
                           double *out,
                           struct RteDiagnostics *diagnostics);

/**
 * Oracle-route σ reconstruction at `n_points` points (`2·n_points` doubles).
 * Points below the albedo floor get NaN.
 *
 * # Safety
 * `points` holds `2·n_points` doubles and `sigma_hat` has room for `n_points`.
 */
enum RteStatus rte_recover_sigma(const struct RteScenario *scenario,
                                 double theta0,
                                 double h,
                                 const double *points,
                                 size_t n_points,
                                 double *sigma_hat);

/**
 * Oracle-route kernel reconstruction with σ taken from the scenario.
 * `samples` holds `n_samples` records `(x1, x2, θ₁, θ₂)`.
 *
 * # Safety
 * `samples` holds `4·n_samples` doubles and `k_hat` has room for `n_samples`.
 */
enum RteStatus rte_recover_k(const struct RteScenario *scenario,
                             double h,
                             const double *samples,
                             size_t n_samples,
                             double *k_hat);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTE_AOT_H */
