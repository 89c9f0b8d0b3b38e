#ifndef DEBIAS_H
#define DEBIAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DebiasCode {
  DEBIAS_CODE_OK = 0,
  /**
   * Bad argument, empty text, malformed config or data.
   */
  DEBIAS_CODE_INVALID_INPUT = 1,
  /**
   * Missing or unreadable model, or wrong model kind.
   */
  DEBIAS_CODE_MODEL = 2,
  /**
   * A backend failed or broke its contract.
   */
  DEBIAS_CODE_BACKEND = 3,
  DEBIAS_CODE_NULL_POINTER = 4,
  /**
   * An input string was not valid UTF-8.
   */
  DEBIAS_CODE_UTF8 = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  DEBIAS_CODE_PANIC = 6,
} DebiasCode;

/**
 * A loaded detector.
 */
typedef struct DebiasDetector DebiasDetector;

/**
 * A loaded detector + recognizer + infiller pipeline.
 */
typedef struct DebiasPipeline DebiasPipeline;

/**
 * Classification metrics; undefined ratios are NaN.
 */
typedef struct DebiasMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
  double precision;
  double recall;
  double f1;
  double accuracy;
} DebiasMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *debias_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *debias_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void debias_string_free(char *s);

/**
 * Loads a saved detector from its model directory.
 *
 * # Safety
 * `model_dir` must be a NUL-terminated string; `out` must be writable.
 */
enum DebiasCode debias_detector_load(const char *model_dir, struct DebiasDetector **out);

/**
 * Bias probability of `text`; `biased` receives 1 when it reaches the
 * detector threshold. Either out-pointer may be NULL.
 *
 * # Safety
 * `detector` must come from [`debias_detector_load`]; `text` must be a
 * NUL-terminated string.
 */
enum DebiasCode debias_detector_detect(const struct DebiasDetector *detector,
                                       const char *text,
                                       double *probability,
                                       int32_t *biased);

/**
 * # Safety
 * `detector` must come from [`debias_detector_load`] or be NULL.
 */
void debias_detector_free(struct DebiasDetector *detector);

/**
 * Loads the three pipeline models from `model_dir`. `config_toml` holds a
 * pipeline config document, or NULL for the defaults.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum DebiasCode debias_pipeline_load(const char *model_dir,
                                     const char *config_toml,
                                     struct DebiasPipeline **out);

/**
 * Runs the pipeline on `text` and stores the result as a JSON document in
 * `json_out` (free it with [`debias_string_free`]).
 *
 * # Safety
 * `pipeline` must come from [`debias_pipeline_load`]; `text` must be a
 * NUL-terminated string; `json_out` must be writable.
 */
enum DebiasCode debias_pipeline_run_json(const struct DebiasPipeline *pipeline,
                                         const char *text,
                                         char **json_out);

/**
 * # Safety
 * `pipeline` must come from [`debias_pipeline_load`] or be NULL.
 */
void debias_pipeline_free(struct DebiasPipeline *pipeline);

/**
 * Metrics for `len` binary (gold, predicted) pairs, nonzero meaning BIASED.
 *
 * # Safety
 * `gold` and `predicted` must point to `len` readable bytes (or be NULL
 * when `len` is 0); `out` must be writable.
 */
enum DebiasCode debias_metrics(const uint8_t *gold,
                               const uint8_t *predicted,
                               size_t len,
                               struct DebiasMetrics *out);

/**
 * Applies the acceptance rule to `len` candidate probabilities: slot `i` of
 * `accepted` becomes 1 when `probabilities[i] < threshold` or
 * `probabilities[i] < original_probability`.
 *
 * # Safety
 * `probabilities` must hold `len` readable values and `accepted` `len`
 * writable bytes.
 */
enum DebiasCode debias_select(double original_probability,
                              const double *probabilities,
                              size_t len,
                              double threshold,
                              uint8_t *accepted);

/**
 * Finds newline-separated `phrases` in `text` and stores the spans as a JSON
 * array in `json_out`. Offsets are character indices.
 *
 * # Safety
 * String arguments must be NUL-terminated; `json_out` must be writable.
 */
enum DebiasCode debias_lexicon_recognize_json(const char *phrases,
                                              const char *text,
                                              char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEBIAS_H */
