#ifndef COORDTRACK_H
#define COORDTRACK_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum CtStatus {
  CT_OK = 0,
  CT_NULL_ARGUMENT = 1,
  CT_IO = 2,
  CT_MALFORMED = 3,
  CT_CONTRACT = 4,
  CT_DIVERGED = 5,
  CT_BAD_UTF8 = 6,
  CT_PANIC = 7,
} CtStatus;

/**
 * Opaque tracker handle: model weights plus per-sequence state.
 */
typedef struct CtTracker CtTracker;

/**
 * Axis-aligned box in image pixels, top-left origin.
 */
typedef struct CtBox {
  double x;
  double y;
  double w;
  double h;
} CtBox;

/**
 * Aggregate tracking metrics over one box sequence pair.
 */
typedef struct CtMetrics {
  /**
   * Success-plot AUC over the IoU threshold sweep.
   */
  double suc;
  /**
   * Fraction of frames with center error <= 20 px.
   */
  double pre;
  /**
   * Fraction of frames with size-normalized center error <= 0.2.
   */
  double normp;
} CtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *ct_version(void);

/**
 * Last error message for this thread, or NULL if none. The caller owns
 * the string and must release it with `ct_string_free`.
 */
char *ct_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from `ct_last_error_message` and not already be freed.
 */
void ct_string_free(char *s);

/**
 * Load weights and build a tracker. Returns NULL on failure; inspect
 * `ct_last_error_message`.
 *
 * # Safety
 * `weights_path` must be a valid NUL-terminated string.
 */
struct CtTracker *ct_tracker_new(const char *weights_path);

/**
 * Destroy a tracker handle. NULL is a no-op.
 *
 * # Safety
 * `t` must come from `ct_tracker_new` and not already be freed.
 */
void ct_tracker_free(struct CtTracker *t);

/**
 * Begin a sequence: extract both templates from `frame` at `init_box`.
 *
 * # Safety
 * `t` must be a live tracker; `frame` must point to `width * height`
 * doubles that stay valid for the duration of the call.
 */
enum CtStatus ct_tracker_init(struct CtTracker *t,
                              const double *frame,
                              uint32_t width,
                              uint32_t height,
                              struct CtBox init_box);

/**
 * Track one frame. Writes the predicted box and score when non-NULL.
 *
 * # Safety
 * As for `ct_tracker_init`; `out_box`/`out_score` may be NULL.
 */
enum CtStatus ct_tracker_step(struct CtTracker *t,
                              const double *frame,
                              uint32_t width,
                              uint32_t height,
                              struct CtBox *out_box,
                              double *out_score);

/**
 * Success / precision / normalized precision over `n` box pairs in
 * image pixels.
 *
 * # Safety
 * `pred` and `gt` must each point to `n` readable boxes.
 */
enum CtStatus ct_metrics(const struct CtBox *pred,
                         const struct CtBox *gt,
                         uintptr_t n,
                         struct CtMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COORDTRACK_H */
