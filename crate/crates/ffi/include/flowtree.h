#ifndef FLOWTREE_H
#define FLOWTREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlowtreeStatus {
  FLOWTREE_STATUS_OK = 0,
  FLOWTREE_STATUS_NULL_ARGUMENT = 1,
  FLOWTREE_STATUS_INVALID_UTF8 = 2,
  FLOWTREE_STATUS_PARSE = 3,
  FLOWTREE_STATUS_IO = 4,
  FLOWTREE_STATUS_INVALID_INPUT = 5,
  FLOWTREE_STATUS_NUMERICAL = 6,
  FLOWTREE_STATUS_OUT_OF_RANGE = 7,
  FLOWTREE_STATUS_INCONCLUSIVE = 8,
  FLOWTREE_STATUS_PANIC = 9,
} FlowtreeStatus;

typedef struct FlowtreeField FlowtreeField;

typedef struct FlowtreeFlow FlowtreeFlow;

typedef struct FlowtreeScenario FlowtreeScenario;

typedef struct FlowtreeTree FlowtreeTree;

/**
 * One nondegenerate critical point. Unused coordinates are zero.
 */
typedef struct FlowtreeCritical {
  double x[2];
  uint32_t index;
  double value;
  double min_abs_eigenvalue;
} FlowtreeCritical;

/**
 * One sample of a flow line.
 */
typedef struct FlowtreeNode {
  double t;
  double x[2];
  double f;
} FlowtreeNode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *flowtree_last_error(void);

/**
 * Parse a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_scenario_parse(const char *toml, struct FlowtreeScenario **out);

/**
 * Load a scenario file or directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_scenario_load(const char *path, struct FlowtreeScenario **out);

/**
 * # Safety
 * `s` must be NULL or a handle from this library not yet freed.
 */
void flowtree_scenario_free(struct FlowtreeScenario *s);

/**
 * Chart dimension (1 or 2).
 *
 * # Safety
 * `s` must be a live scenario handle and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_scenario_dim(const struct FlowtreeScenario *s, uint32_t *out);

/**
 * Difference field `F = f_upper - f_lower`. The field keeps the scenario
 * alive, so the scenario handle may be freed afterwards.
 *
 * # Safety
 * `s` must be a live scenario handle and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_field_new(const struct FlowtreeScenario *s,
                                       uint32_t upper,
                                       uint32_t lower,
                                       struct FlowtreeField **out);

/**
 * # Safety
 * `f` must be NULL or a handle from this library not yet freed.
 */
void flowtree_field_free(struct FlowtreeField *f);

/**
 * Value and gradient of the field at `x`.
 *
 * # Safety
 * `f` must be a live field handle; `value` and `grad` writable (`grad` holds 2 doubles).
 */
enum FlowtreeStatus flowtree_field_eval(const struct FlowtreeField *f,
                                        const double *x,
                                        double *value,
                                        double *grad);

/**
 * Critical points of the field. Pass `buf = NULL` to query the count in
 * `len`; otherwise `len` holds the capacity on entry and the count on exit.
 *
 * # Safety
 * `f` must be a live field handle, `len` writable, `buf` NULL or `*len` elements long.
 */
enum FlowtreeStatus flowtree_field_critical_points(const struct FlowtreeField *f,
                                                   struct FlowtreeCritical *buf,
                                                   uintptr_t *len);

/**
 * Integrate the maximal flow of `-grad F` through `x0` with default options.
 *
 * # Safety
 * `f` must be a live field handle, `x0` hold `dim` doubles and `out` be writable.
 */
enum FlowtreeStatus flowtree_flow_integrate(const struct FlowtreeField *f,
                                            const double *x0,
                                            struct FlowtreeFlow **out);

/**
 * # Safety
 * `fl` must be NULL or a handle from this library not yet freed.
 */
void flowtree_flow_free(struct FlowtreeFlow *fl);

/**
 * Samples of the flow in flow order. Same buffer protocol as
 * `flowtree_field_critical_points`.
 *
 * # Safety
 * `fl` must be a live flow handle, `len` writable, `buf` NULL or `*len` elements long.
 */
enum FlowtreeStatus flowtree_flow_nodes(const struct FlowtreeFlow *fl,
                                        struct FlowtreeNode *buf,
                                        uintptr_t *len);

/**
 * Class of the flow as a static string: `morse`, `fold-emanating`,
 * `fold-terminating`, `singular` or `chart-truncated`.
 *
 * # Safety
 * `fl` must be a live flow handle.
 */
const char *flowtree_flow_class(const struct FlowtreeFlow *fl);

/**
 * Load a broken flow tree document.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_tree_load(const char *path, struct FlowtreeTree **out);

/**
 * # Safety
 * `t` must be NULL or a handle from this library not yet freed.
 */
void flowtree_tree_free(struct FlowtreeTree *t);

/**
 * Check vertex matching and loop closure within `tol`.
 *
 * # Safety
 * `t` must be a live tree handle; `valid` and `max_residual` writable.
 */
enum FlowtreeStatus flowtree_tree_validate(const struct FlowtreeTree *t,
                                           double tol,
                                           bool *valid,
                                           double *max_residual);

/**
 * Combinatorial type as a newly allocated string, released with
 * `flowtree_string_free`.
 *
 * # Safety
 * `t` must be a live tree handle and `out` a writable pointer.
 */
enum FlowtreeStatus flowtree_tree_gamma(const struct FlowtreeTree *t, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library not yet freed.
 */
void flowtree_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWTREE_H */
