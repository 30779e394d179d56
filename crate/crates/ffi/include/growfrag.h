#ifndef GROWFRAG_H
#define GROWFRAG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every call.
 */
typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_ARGUMENT = 2,
  GF_STATUS_CONFIG = 3,
  GF_STATUS_EXPLOSION = 4,
  GF_STATUS_NO_ROOT = 5,
  GF_STATUS_NUMERICAL = 6,
  GF_STATUS_IO = 7,
  GF_STATUS_PANIC = 8,
} GfStatus;

/**
 * A validated model.
 */
typedef struct GfModel GfModel;

/**
 * Estimated Malthus exponent, harmonic function and profile.
 */
typedef struct GfSpectral GfSpectral;

typedef struct GfMalthusResult {
  double lambda;
  double std_error;
  double bracket_lo;
  double bracket_hi;
  uint64_t samples;
  /**
   * 1 when the certified bracket reached the requested tolerance.
   */
  int32_t converged;
} GfMalthusResult;

typedef struct GfCriterionResult {
  /**
   * 1 when a certifying `(q, x)` pair was found for the large-mass side.
   */
  int32_t infinity_ok;
  double q_infinity;
  double x_infinity;
  /**
   * 1 when a certifying pair was found for the small-mass side.
   */
  int32_t zero_ok;
  double q_zero;
  double x_zero;
} GfCriterionResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gf_version(void);

/**
 * Build a model from a TOML model section, e.g.
 * `family = "hump"\na = 3.0\nfission = { kind = "saturating", b = 4.0 }`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_model_from_toml(const char *toml, struct GfModel **out);

/**
 * Build a built-in family with its default parameters.
 *
 * # Safety
 * `family` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_model_family(const char *family, struct GfModel **out);

/**
 * # Safety
 * `model` must come from a `gf_model_*` constructor and not be used again.
 */
void gf_model_free(struct GfModel *model);

/**
 * Growth rate `c(x)`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_growth(const struct GfModel *model, double x, double *out);

/**
 * Fission rate `B(x)`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_fission(const struct GfModel *model, double x, double *out);

/**
 * `sup c(x)/x`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_gamma(const struct GfModel *model, double *out);

/**
 * Deterministic flow: mass at time `t` starting from `x0`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_flow(const struct GfModel *model, double x0, double t, double *out);

/**
 * Simulate one population path (replicate `replicate` of `seed`) and
 * record the number of individuals and the total mass at each of the
 * `n_times` times, which must not exceed `horizon`.
 *
 * # Safety
 * `times`, `counts` and `masses` must each point to `n_times` doubles.
 */
enum GfStatus gf_simulate_population(const struct GfModel *model,
                                     double x0,
                                     double horizon,
                                     size_t cap,
                                     uint64_t seed,
                                     uint64_t replicate,
                                     const double *times,
                                     size_t n_times,
                                     double *counts,
                                     double *masses);

/**
 * Malthus exponent by certified stochastic bisection. `tolerance` and
 * `n_max` of 0 select the defaults.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_malthus_exponent(const struct GfModel *model,
                                  double x0,
                                  uint64_t seed,
                                  double tolerance,
                                  uint64_t n_max,
                                  struct GfMalthusResult *out);

/**
 * Full spectral estimate. `options_toml` may be null for defaults or hold
 * spectral options such as `n_h = 20000` and `[malthus]` settings.
 *
 * # Safety
 * `options_toml` must be null or NUL-terminated; `out` must be valid.
 */
enum GfStatus gf_spectral_solve(const struct GfModel *model,
                                const char *options_toml,
                                uint64_t seed,
                                struct GfSpectral **out);

/**
 * # Safety
 * `s` must come from `gf_spectral_solve` and not be used again.
 */
void gf_spectral_free(struct GfSpectral *s);

/**
 * # Safety
 * Pointers must be valid; `std_error` may be null.
 */
enum GfStatus gf_spectral_lambda(const struct GfSpectral *s, double *lambda, double *std_error);

/**
 * Interpolated harmonic function `h(x)`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_spectral_h(const struct GfSpectral *s, double x, double *out);

/**
 * Number of points of the profile grid.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_spectral_nu_len(const struct GfSpectral *s, size_t *out);

/**
 * Copy the profile grid and density (normalized so `<nu, h> = 1`) into
 * buffers of length `len`, which must equal `gf_spectral_nu_len`.
 *
 * # Safety
 * `grid` and `density` must each point to `len` doubles.
 */
enum GfStatus gf_spectral_nu(const struct GfSpectral *s, double *grid, double *density, size_t len);

/**
 * Grid search for the two sufficient inequalities certifying a positive
 * Malthus exponent, with default search ranges.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_criterion(const struct GfModel *model, struct GfCriterionResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROWFRAG_H */
