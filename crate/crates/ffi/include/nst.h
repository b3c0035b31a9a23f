#ifndef NST_H
#define NST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NstStatus {
  NST_STATUS_OK = 0,
  NST_STATUS_NULL_POINTER = 1,
  NST_STATUS_INVALID_UTF8 = 2,
  NST_STATUS_PARSE_ERROR = 3,
  NST_STATUS_INVALID_MODEL = 4,
  NST_STATUS_INVALID_ARGUMENT = 5,
  NST_STATUS_ENGINE_ERROR = 6,
  NST_STATUS_CALIBRATION_ERROR = 7,
  NST_STATUS_BUFFER_TOO_SMALL = 8,
  NST_STATUS_PANIC = 9,
} NstStatus;

/**
 * Opaque parsed model.
 */
typedef struct NstModel NstModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next library call on this thread.
 */
const char *nst_last_error(void);

void nst_string_free(char *s);

/**
 * Parses model source text into a new handle stored in `*out`.
 */
enum NstStatus nst_model_parse(const char *source, struct NstModel **out);

void nst_model_free(struct NstModel *model);

/**
 * Canonical source text of the model.
 */
enum NstStatus nst_model_print(const struct NstModel *model, char **out);

/**
 * Sets `*ok` to 1 when the model has no validation errors, else 0, and
 * stores the report as JSON in `*report_json` when that pointer is non-null.
 */
enum NstStatus nst_model_validate(const struct NstModel *model, int32_t *ok, char **report_json);

enum NstStatus nst_model_param_count(const struct NstModel *model, uintptr_t *out);

/**
 * Copies the model's parameter values into `out[0..len]`.
 */
enum NstStatus nst_model_params(const struct NstModel *model, double *out, uintptr_t len);

/**
 * Simulates `n_paths` paths of the value state over `n_steps` steps of
 * size `dt` from `x0`. `params` may be null to use the model's own values.
 * Writes `n_paths * (n_steps + 1)` values path-major into `out_values` and,
 * if non-null, one divergence flag per path into `out_diverged`.
 */
enum NstStatus nst_simulate(const struct NstModel *model,
                            const double *params,
                            uintptr_t n_params,
                            double x0,
                            double dt,
                            uintptr_t n_steps,
                            uintptr_t n_paths,
                            uint64_t seed,
                            double *out_values,
                            uintptr_t out_len,
                            uint8_t *out_diverged);

/**
 * Mean, standard deviation, skewness and kurtosis of `series` into `out[0..4]`.
 */
enum NstStatus nst_moments(const double *series, uintptr_t len, double *out);

/**
 * Calibrates the model to `series` with default settings apart from
 * `epochs` and `seed`. Writes the best parameters into `out_theta` and the
 * unweighted moment MAE into `*out_mae` (if non-null).
 */
enum NstStatus nst_calibrate(const struct NstModel *model,
                             const double *series,
                             uintptr_t len,
                             uintptr_t epochs,
                             uint64_t seed,
                             double *out_theta,
                             uintptr_t theta_len,
                             double *out_mae);

/**
 * One price-impact step: `p + lambda * (sum(fundamental) * dt + noise)`.
 */
enum NstStatus nst_step_price(double p,
                              const double *fundamental,
                              uintptr_t n,
                              double noise,
                              double lambda,
                              double dt,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NST_H */
