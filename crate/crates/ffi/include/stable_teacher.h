#ifndef STABLE_TEACHER_H
#define STABLE_TEACHER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_ARGUMENT = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_CONFIG = 3,
  ST_STATUS_IO = 4,
  ST_STATUS_CHECKPOINT = 5,
  ST_STATUS_INVALID_INPUT = 6,
  ST_STATUS_DIVERGED = 7,
  ST_STATUS_PANIC = 8,
} StStatus;

/**
 * Run configuration handle.
 */
typedef struct StConfig StConfig;

/**
 * Dataset plus its labeled/unlabeled partition.
 */
typedef struct StData StData;

/**
 * Student/teacher state and optimizer.
 */
typedef struct StTrainer StTrainer;

/**
 * Headline numbers of one evaluation.
 */
typedef struct StMetrics {
  double frame_map_50;
  double video_map_20;
  double video_map_50;
  double coherence;
  size_t num_videos;
} StMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *st_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *st_version(void);

/**
 * Loads a configuration file, or the defaults when `path` is null.
 */
enum StStatus st_config_load(const char *path, struct StConfig **out);

/**
 * Sets one dotted key, e.g. `train.mode` to `full`.
 */
enum StStatus st_config_set(struct StConfig *config, const char *key, const char *value);

/**
 * Writes the full `key = value` text of `config` to `path`.
 */
enum StStatus st_config_save(const struct StConfig *config, const char *path);

void st_config_free(struct StConfig *config);

/**
 * Generates (or loads from cache) the dataset and split described by `config`.
 */
enum StStatus st_data_load(const struct StConfig *config, struct StData **out);

/**
 * Clip counts: labeled, unlabeled, validation, test. `counts` must hold 4 entries.
 */
enum StStatus st_data_counts(const struct StData *data, size_t *counts);

void st_data_free(struct StData *data);

/**
 * Fresh student/teacher state for the training section of `config`.
 */
enum StStatus st_trainer_new(const struct StConfig *config, struct StTrainer **out);

/**
 * Restores a trainer from a checkpoint, using the configuration stored in it.
 */
enum StStatus st_trainer_load(const char *checkpoint, struct StTrainer **out);

/**
 * Runs one epoch; `mean_loss` (nullable) receives the epoch's mean total loss.
 */
enum StStatus st_trainer_epoch(struct StTrainer *trainer,
                               const struct StData *data,
                               double *mean_loss);

/**
 * Trains to the configured epoch budget, writing logs and checkpoints under `out_dir`.
 */
enum StStatus st_trainer_train(struct StTrainer *trainer,
                               const struct StData *data,
                               const char *out_dir);

/**
 * Epochs completed so far.
 */
size_t st_trainer_epochs_done(const struct StTrainer *trainer);

/**
 * Trainable scalars: base detector and, when present, the error recovery module.
 */
enum StStatus st_trainer_parameter_counts(const struct StTrainer *trainer,
                                          size_t *base,
                                          size_t *eor);

enum StStatus st_trainer_save(const struct StTrainer *trainer, const char *path);

/**
 * Scores the evaluation model on `split` (`train`, `validation` or `test`).
 * When `report_path` is non-null the full JSON report is written there too.
 */
enum StStatus st_trainer_evaluate(const struct StTrainer *trainer,
                                  const struct StData *data,
                                  const char *split,
                                  const char *report_path,
                                  struct StMetrics *out);

void st_trainer_free(struct StTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABLE_TEACHER_H */
