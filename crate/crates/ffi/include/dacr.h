#ifndef DACR_H
#define DACR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DacrStatus {
  DACR_STATUS_OK = 0,
  DACR_STATUS_NULL_ARGUMENT = 1,
  DACR_STATUS_INVALID_UTF8 = 2,
  DACR_STATUS_FORMAT = 3,
  DACR_STATUS_DATA_INTEGRITY = 4,
  DACR_STATUS_SHAPE = 5,
  DACR_STATUS_CONFIG = 6,
  DACR_STATUS_TRAINING_DIVERGED = 7,
  DACR_STATUS_STATE = 8,
  DACR_STATUS_RANGE = 9,
  DACR_STATUS_EVALUATION = 10,
  DACR_STATUS_IO = 11,
  DACR_STATUS_BUFFER_TOO_SMALL = 12,
  DACR_STATUS_PANIC = 13,
} DacrStatus;

/**
 * A loaded corpus.
 */
typedef struct DacrCorpus DacrCorpus;

/**
 * Frozen extractors, reconstructor and calibration table.
 */
typedef struct DacrDetector DacrDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dacr_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length including the NUL,
 * or 0 when the last call succeeded.
 *
 * # Safety
 * `buf` must be NULL or point to `cap` writable bytes.
 */
size_t dacr_last_error_message(char *buf, size_t cap);

/**
 * Load a corpus (`.csv` columnar text or a binary manifest).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DacrStatus dacr_corpus_load(const char *path, struct DacrCorpus **out);

/**
 * # Safety
 * `corpus` must be NULL or a handle from [`dacr_corpus_load`] not yet freed.
 */
void dacr_corpus_free(struct DacrCorpus *corpus);

/**
 * Number of instances, 0 for a NULL handle.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t dacr_corpus_len(const struct DacrCorpus *corpus);

/**
 * Length and feature count of instance `index`.
 *
 * # Safety
 * `corpus` must be a live handle; `t_len` and `features` must be writable.
 */
enum DacrStatus dacr_corpus_shape(const struct DacrCorpus *corpus,
                                  size_t index,
                                  size_t *t_len,
                                  size_t *features);

/**
 * Copy instance `index` row-major (`T×F`) into `buf`, which must hold at
 * least `T·F` values.
 *
 * # Safety
 * `corpus` must be a live handle; `buf` must point to `cap` writable doubles.
 */
enum DacrStatus dacr_corpus_values(const struct DacrCorpus *corpus,
                                   size_t index,
                                   double *buf,
                                   size_t cap);

/**
 * Class label of instance `index`, or -1 when it has none.
 *
 * # Safety
 * `corpus` must be a live handle; `class_label` must be writable.
 */
enum DacrStatus dacr_corpus_class(const struct DacrCorpus *corpus,
                                  size_t index,
                                  int64_t *class_label);

/**
 * Load a detector from a directory of `f<i>.ckpt` extractor checkpoints, a
 * reconstructor checkpoint and a calibration table.
 *
 * # Safety
 * The paths must be NUL-terminated strings; `out` must be writable.
 */
enum DacrStatus dacr_detector_load(const char *encoders_dir,
                                   const char *reconstructor,
                                   const char *calibration,
                                   struct DacrDetector **out);

/**
 * # Safety
 * `detector` must be NULL or a handle from [`dacr_detector_load`] not yet freed.
 */
void dacr_detector_free(struct DacrDetector *detector);

/**
 * Feature count the detector expects, 0 for a NULL handle.
 *
 * # Safety
 * `detector` must be NULL or a live handle.
 */
size_t dacr_detector_features(const struct DacrDetector *detector);

/**
 * History length m; timestamps before m get the warm-up score -100.
 *
 * # Safety
 * `detector` must be NULL or a live handle.
 */
size_t dacr_detector_history(const struct DacrDetector *detector);

/**
 * Score a row-major `t_len × features` series. Writes `t_len` per-timestamp
 * scores (percent over the calibrated error) into `scores`.
 *
 * # Safety
 * `detector` must be a live handle; `values` must point to
 * `t_len·features` doubles and `scores` to `cap` writable doubles.
 */
enum DacrStatus dacr_detector_score(const struct DacrDetector *detector,
                                    const double *values,
                                    size_t t_len,
                                    size_t features,
                                    double *scores,
                                    size_t cap);

/**
 * ROC-AUC of `scores` against 0/1 `labels` (1 = anomalous).
 *
 * # Safety
 * `scores` and `labels` must each point to `n` readable values; `out` must
 * be writable.
 */
enum DacrStatus dacr_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Run the full pipeline for an experiment config file and report the AUC
 * mean and sample std over its seeds. `runs_dir` may be NULL to keep
 * everything in memory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string, `runs_dir` NULL or one;
 * `mean` and `std` must be writable.
 */
enum DacrStatus dacr_run_experiment(const char *config_path,
                                    const char *runs_dir,
                                    double *mean,
                                    double *std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DACR_H */
