#ifndef RETECS_H
#define RETECS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RetecsAgent {
  RETECS_AGENT_NETWORK = 0,
  RETECS_AGENT_TREE = 1,
  RETECS_AGENT_RANDOM = 2,
  RETECS_AGENT_SORTING = 3,
  RETECS_AGENT_WEIGHTING = 4,
} RetecsAgent;

typedef enum RetecsReward {
  RETECS_REWARD_FAILURE_COUNT = 0,
  RETECS_REWARD_TEST_CASE_FAILURE = 1,
  RETECS_REWARD_TIME_RANKED = 2,
} RetecsReward;

typedef enum RetecsStatus {
  RETECS_STATUS_OK = 0,
  RETECS_STATUS_NULL_POINTER = 1,
  RETECS_STATUS_INVALID_UTF8 = 2,
  RETECS_STATUS_INVALID_ARGUMENT = 3,
  RETECS_STATUS_CONFIG = 4,
  RETECS_STATUS_INTEGRITY = 5,
  RETECS_STATUS_PARSE = 6,
  RETECS_STATUS_DIVERGENCE = 7,
  RETECS_STATUS_EMPTY = 8,
  RETECS_STATUS_CHECKPOINT = 9,
  RETECS_STATUS_IO = 10,
  RETECS_STATUS_PANIC = 11,
} RetecsStatus;

typedef enum RetecsLogFormat {
  RETECS_LOG_FORMAT_CANONICAL = 0,
  RETECS_LOG_FORMAT_ABB = 1,
} RetecsLogFormat;

/**
 * A parsed or generated CI history.
 */
typedef struct RetecsDataset RetecsDataset;

/**
 * The outcome of replaying a dataset.
 */
typedef struct RetecsExperiment RetecsExperiment;

typedef struct RetecsSynthConfig {
  size_t test_count;
  size_t cycle_count;
  double always_fail_fraction;
  double noise_flip_probability;
  double min_duration;
  double max_duration;
  uint64_t seed;
} RetecsSynthConfig;

/**
 * Experiment settings. `hidden_layers` may be null, in which case the
 * library default network shape is used.
 */
typedef struct RetecsRunConfig {
  enum RetecsAgent agent;
  enum RetecsReward reward;
  size_t history_length;
  const size_t *hidden_layers;
  size_t hidden_layer_count;
  double noise_std;
  double noise_decay;
  double learning_rate;
  uint64_t seed;
  double budget_ratio;
  size_t iterations;
} RetecsRunConfig;

typedef struct RetecsDatasetStats {
  size_t distinct_tests;
  size_t commit_count;
  size_t execution_count;
  double failed_fraction;
} RetecsDatasetStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *retecs_last_error_message(void);

struct RetecsSynthConfig retecs_synth_config_default(void);

struct RetecsRunConfig retecs_run_config_default(void);

/**
 * Loads a CI log from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RetecsStatus retecs_dataset_load(const char *path,
                                      enum RetecsLogFormat format,
                                      struct RetecsDataset **out);

/**
 * Generates a synthetic history.
 *
 * # Safety
 * `config` must point to a valid config and `out` be writable.
 */
enum RetecsStatus retecs_dataset_synth(const struct RetecsSynthConfig *config,
                                       struct RetecsDataset **out);

/**
 * # Safety
 * `dataset` must come from this library; `out` must be writable.
 */
enum RetecsStatus retecs_dataset_stats(const struct RetecsDataset *dataset,
                                       struct RetecsDatasetStats *out);

/**
 * # Safety
 * `dataset` must be null or a pointer obtained from this library that has
 * not been freed yet.
 */
void retecs_dataset_free(struct RetecsDataset *dataset);

/**
 * Replays `dataset` with the configured agent.
 *
 * # Safety
 * `dataset` must come from this library, `config` must be valid (with
 * `hidden_layer_count` readable entries behind `hidden_layers` when it is
 * non-null) and `out` writable.
 */
enum RetecsStatus retecs_experiment_run(const struct RetecsDataset *dataset,
                                        const struct RetecsRunConfig *config,
                                        struct RetecsExperiment **out);

/**
 * Number of cycles in the mean NAPFD series; 0 for a null handle.
 *
 * # Safety
 * `experiment` must be null or come from this library.
 */
size_t retecs_experiment_cycle_count(const struct RetecsExperiment *experiment);

/**
 * Copies the per-cycle mean NAPFD into `values`, which must hold at least
 * `capacity` doubles; `capacity` must be at least the cycle count.
 *
 * # Safety
 * `experiment` must come from this library and `values` must be writable
 * for `capacity` elements.
 */
enum RetecsStatus retecs_experiment_mean_napfd(const struct RetecsExperiment *experiment,
                                               double *values,
                                               size_t capacity);

/**
 * Least-squares trend of the mean series. Fails with `RETECS_STATUS_EMPTY`
 * for datasets with fewer than two cycles.
 *
 * # Safety
 * `experiment` must come from this library; `slope` and `intercept` must be
 * writable.
 */
enum RetecsStatus retecs_experiment_trend(const struct RetecsExperiment *experiment,
                                          double *slope,
                                          double *intercept);

/**
 * # Safety
 * `experiment` must be null or a pointer obtained from this library that
 * has not been freed yet.
 */
void retecs_experiment_free(struct RetecsExperiment *experiment);

/**
 * NAPFD of a schedule over a pool of `pool_size` tests numbered from 0.
 * `failed[i]` is non-zero when test `i` failed; `order` lists the
 * `scheduled` executed tests, first to last.
 *
 * # Safety
 * `failed` must be readable for `pool_size` bytes, `order` for `scheduled`
 * elements (it may be null when `scheduled` is 0) and `out` writable.
 */
enum RetecsStatus retecs_napfd(const uint8_t *failed,
                               size_t pool_size,
                               const size_t *order,
                               size_t scheduled,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RETECS_H */
