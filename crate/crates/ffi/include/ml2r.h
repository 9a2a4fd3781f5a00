#ifndef ML2R_H
#define ML2R_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Ml2rStatus {
  ML2R_STATUS_OK = 0,
  ML2R_STATUS_NULL_POINTER = 1,
  ML2R_STATUS_INVALID_UTF8 = 2,
  ML2R_STATUS_INVALID_ARGUMENT = 3,
  ML2R_STATUS_INVALID_REFINERS = 4,
  ML2R_STATUS_OVERFLOW = 5,
  ML2R_STATUS_DIMENSION_MISMATCH = 6,
  ML2R_STATUS_DEGENERATE = 7,
  ML2R_STATUS_UNSUPPORTED = 8,
  ML2R_STATUS_UNKNOWN_MODEL = 9,
  ML2R_STATUS_PARSE = 10,
  ML2R_STATUS_BUDGET_EXCEEDED = 11,
  ML2R_STATUS_IO = 12,
  ML2R_STATUS_PANIC = 13,
} Ml2rStatus;

// Opaque model handle.
typedef struct Ml2rModel Ml2rModel;

// Opaque plan handle.
typedef struct Ml2rPlan Ml2rPlan;

typedef struct Ml2rParams {
  double alpha;
  double beta;
  double v1;
  double var_y0;
  double h_max;
} Ml2rParams;

typedef struct Ml2rPlanSummary {
  uint64_t depth;
  uint64_t root;
  // `h = h_max / h_inv`
  uint64_t h_inv;
  uint64_t n;
  double cost;
} Ml2rPlanSummary;

typedef struct Ml2rRunResult {
  double estimate;
  double nu_bar;
  double cost_units;
  double time_s;
} Ml2rRunResult;

// Statistics over replications. `bias` and `l2_error` are NaN when the
// model has no reference value.
typedef struct Ml2rReplication {
  double mean;
  double bias;
  double nu_tilde;
  double l2_error;
  double time_s;
} Ml2rReplication;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into the library from the same thread.
const char *ml2r_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ml2r_version(void);

// Release a string returned by the library.
//
// # Safety
// `s` must be null or a pointer obtained from this library that has not been freed.
void ml2r_string_free(char *s);

// Build a preset model (`call`, `lookback`, `barrier`, `nested`, `synthetic`).
//
// # Safety
// `id` must be a NUL-terminated string and `out` a writable pointer.
enum Ml2rStatus ml2r_model_preset(const char *id, struct Ml2rModel **out);

// Build a model from a configuration document.
//
// # Safety
// `config` must be a NUL-terminated string and `out` a writable pointer.
enum Ml2rStatus ml2r_model_from_config(const char *config, struct Ml2rModel **out);

// # Safety
// `model` must be null or a handle from this library that has not been freed.
void ml2r_model_free(struct Ml2rModel *model);

// Reference value of the model; `has_reference` receives 0 when none is known.
//
// # Safety
// `model` must be a live handle; `value` and `has_reference` writable pointers.
enum Ml2rStatus ml2r_model_reference(const struct Ml2rModel *model,
                                     double *value,
                                     int32_t *has_reference);

// Published structural parameters of a preset.
//
// # Safety
// `id` must be a NUL-terminated string and `out` a writable pointer.
enum Ml2rStatus ml2r_published_params(const char *id, struct Ml2rParams *out);

// Estimate `V1` and `var(Y0)` by simulation.
//
// # Safety
// `model` must be a live handle and `out` a writable pointer.
enum Ml2rStatus ml2r_calibrate(const struct Ml2rModel *model,
                               uint64_t samples,
                               uint64_t m_probe,
                               uint64_t seed,
                               struct Ml2rParams *out);

// Optimal plan for target RMSE `epsilon`. `kind` is one of `crude`,
// `multistep`, `mlmc`, `ml2r`; `regime` is `sum` or `max`; `rounding` is
// `floor`, `nearest` or `up`.
//
// # Safety
// String arguments must be NUL-terminated, `params` readable and `out` writable.
enum Ml2rStatus ml2r_plan_new(const char *kind,
                              double epsilon,
                              const struct Ml2rParams *params,
                              const char *regime,
                              const char *rounding,
                              uint64_t m_max,
                              struct Ml2rPlan **out);

// Parse a plan document.
//
// # Safety
// `document` must be a NUL-terminated string and `out` a writable pointer.
enum Ml2rStatus ml2r_plan_from_text(const char *document, struct Ml2rPlan **out);

// Serialise a plan; release the result with [`ml2r_string_free`].
//
// # Safety
// `plan` must be a live handle and `out` a writable pointer.
enum Ml2rStatus ml2r_plan_to_text(const struct Ml2rPlan *plan, char **out);

// # Safety
// `plan` must be a live handle and `out` a writable pointer.
enum Ml2rStatus ml2r_plan_summary(const struct Ml2rPlan *plan, struct Ml2rPlanSummary *out);

// # Safety
// `plan` must be null or a handle from this library that has not been freed.
void ml2r_plan_free(struct Ml2rPlan *plan);

// Richardson-Romberg weights for refiners `ns[0..len]`, written to `out[0..len]`.
//
// # Safety
// `ns` must be readable and `out` writable for `len` elements.
enum Ml2rStatus ml2r_weights(double alpha, const uint64_t *ns, uintptr_t len, double *out);

// Execute a plan once with replication index 0.
//
// # Safety
// `plan` and `model` must be live handles and `out` a writable pointer.
enum Ml2rStatus ml2r_run(const struct Ml2rPlan *plan,
                         const struct Ml2rModel *model,
                         uint64_t seed,
                         struct Ml2rRunResult *out);

// `reps` independent runs of a plan.
//
// # Safety
// `plan` and `model` must be live handles and `out` a writable pointer.
enum Ml2rStatus ml2r_replicate(const struct Ml2rPlan *plan,
                               const struct Ml2rModel *model,
                               uintptr_t reps,
                               uint64_t seed,
                               struct Ml2rReplication *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ML2R_H */
