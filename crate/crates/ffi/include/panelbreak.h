#ifndef PANELBREAK_H
#define PANELBREAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; 1–4 match the command-line exit codes.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_INPUT = 1,
  PB_STATUS_INFEASIBLE = 2,
  PB_STATUS_NUMERICAL = 3,
  PB_STATUS_INTERNAL = 4,
  PB_STATUS_NULL_ARGUMENT = 5,
} PbStatus;

/**
 * Table kinds for [`pb_table_value`].
 */
typedef enum PbCvKind {
  PB_CV_KIND_SUP_F = 0,
  PB_CV_KIND_WDMAX_UNIT = 1,
  PB_CV_KIND_WDMAX = 2,
  PB_CV_KIND_SEQ_F = 3,
} PbCvKind;

/**
 * Opaque panel handle.
 */
typedef struct PbPanel PbPanel;

/**
 * Opaque critical-value table handle.
 */
typedef struct PbTable PbTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *pb_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *pb_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pb_string_free(char *s);

/**
 * Builds a panel from dense arrays. `y` is `n·t` values ordered unit by unit; `x` and `w`
 * are `n·t·p` values ordered unit, then period, then regressor. `x` may be null when `p_x = 0`.
 *
 * # Safety
 * Array pointers must reference the stated number of readable doubles.
 */
enum PbStatus pb_panel_new(size_t n,
                           size_t t,
                           size_t p_x,
                           size_t p_w,
                           const double *y,
                           const double *x,
                           const double *w,
                           struct PbPanel **out);

/**
 * Loads a long-format CSV. `schema_json` is `{"unit":…, "period":…, "y":…, "x":[…], "w":[…], "factors":[…]}`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum PbStatus pb_panel_load_csv(const char *path,
                                const char *schema_json,
                                struct PbPanel **out);

/**
 * # Safety
 * `panel` must come from this library (or be null) and not be used afterwards.
 */
void pb_panel_free(struct PbPanel *panel);

/**
 * Writes `N`, `T`, `p_x`, `p_w`; any output pointer may be null.
 *
 * # Safety
 * `panel` must be a live handle.
 */
enum PbStatus pb_panel_dims(const struct PbPanel *panel,
                            size_t *n,
                            size_t *t,
                            size_t *p_x,
                            size_t *p_w);

/**
 * The default table (`PANELBREAK_CV_TABLE` or the embedded one).
 *
 * # Safety
 * `out` must be writable.
 */
enum PbStatus pb_table_default(struct PbTable **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum PbStatus pb_table_load(const char *path, struct PbTable **out);

/**
 * # Safety
 * `table` must come from this library (or be null) and not be used afterwards.
 */
void pb_table_free(struct PbTable *table);

/**
 * Critical value for `kind` at `(k, p_w, epsilon, level)`; for `SeqF`, `k` is the number of breaks under the null.
 *
 * # Safety
 * `table` must be a live handle and `out` writable.
 */
enum PbStatus pb_table_value(const struct PbTable *table,
                             enum PbCvKind kind,
                             size_t k,
                             size_t p_w,
                             double epsilon,
                             double level,
                             double *out);

/**
 * Estimates `k` break dates (or fits at `{"dates": […]}`) and returns the fit as JSON.
 * `options_json` may set `k`, `dates`, `trim`, `bandwidth`, `breaking_constant`, `max_iter`, `level`.
 *
 * # Safety
 * `panel` must be live; `options_json` NUL-terminated (may be empty); `out` writable.
 */
enum PbStatus pb_estimate(const struct PbPanel *panel,
                          const char *options_json,
                          char **out);

/**
 * Runs a test given `{"test": "supf"|"wdmax"|"seqf"|"fknown", …}` and returns the report as JSON.
 * Other keys: `k`, `k_max`, `weights` (`"unit"`/`"matched"`), `dates`, `trim`, `alpha`, `bandwidth`, `seq_mode`,
 * `sup` (`"estimated"`/`"exhaustive"`).
 *
 * # Safety
 * `panel` and `table` must be live (`table` may be null for `fknown`); strings NUL-terminated; `out` writable.
 */
enum PbStatus pb_test(const struct PbPanel *panel,
                      const struct PbTable *table,
                      const char *options_json,
                      char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANELBREAK_H */
