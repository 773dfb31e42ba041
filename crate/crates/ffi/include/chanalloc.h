#ifndef CHANALLOC_H
#define CHANALLOC_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ChanallocStatus {
  CHANALLOC_STATUS_OK = 0,
  CHANALLOC_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CHANALLOC_STATUS_INVALID_UTF8 = 2,
  /**
   * Parameters violate a protocol hypothesis or are malformed.
   */
  CHANALLOC_STATUS_CONFIG = 3,
  CHANALLOC_STATUS_PARSE = 4,
  /**
   * A link or channel index is out of range.
   */
  CHANALLOC_STATUS_INDEX = 5,
  CHANALLOC_STATUS_IO = 6,
  CHANALLOC_STATUS_PROTOCOL = 7,
  /**
   * A requested time index lies outside the trace.
   */
  CHANALLOC_STATUS_OUT_OF_RANGE = 8,
  /**
   * An internal panic was caught at the boundary.
   */
  CHANALLOC_STATUS_PANIC = 9,
} ChanallocStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct ChanallocConfig ChanallocConfig;

/**
 * Opaque record of one simulated run.
 */
typedef struct ChanallocTrace ChanallocTrace;

/**
 * Summary figures of a trace.
 */
typedef struct ChanallocTraceSummary {
  double optimal_sum;
  double total_reward;
  double final_regret;
  double final_pseudo_regret;
} ChanallocTraceSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call on this thread.
 */
const char *chanalloc_last_error_message(void);

/**
 * Default configuration for `n_links` links and `n_channels` channels.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum ChanallocStatus chanalloc_config_new(uintptr_t n_links,
                                          uintptr_t n_channels,
                                          struct ChanallocConfig **out);

/**
 * Parses configuration text (`key = value` lines).
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ChanallocStatus chanalloc_config_parse(const char *text, struct ChanallocConfig **out);

/**
 * Sets one configuration key from its textual value, with the same syntax
 * and validation as configuration files. The handle is unchanged on failure.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum ChanallocStatus chanalloc_config_set(struct ChanallocConfig *config,
                                          const char *key,
                                          const char *value);

/**
 * Serialized configuration; release with [`chanalloc_string_free`].
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum ChanallocStatus chanalloc_config_to_text(const struct ChanallocConfig *config, char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void chanalloc_string_free(char *s);

/**
 * # Safety
 * `config` must be a handle from this library or null; it is invalid afterwards.
 */
void chanalloc_config_free(struct ChanallocConfig *config);

/**
 * Optimal one-to-one allocation of a row-major `n_links × n_channels`
 * expected-QoS matrix. Channels written to `out_channels` are 1-based.
 *
 * # Safety
 * `q` must point to `n_links * n_channels` doubles, `out_channels` to
 * `n_links` slots, and `out_value` to one double.
 */
enum ChanallocStatus chanalloc_solve_optimal(const double *q,
                                             uintptr_t n_links,
                                             uintptr_t n_channels,
                                             uintptr_t *out_channels,
                                             double *out_value);

/**
 * Simulates replication `rep` of the configured algorithm.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum ChanallocStatus chanalloc_simulate(const struct ChanallocConfig *config,
                                        uint64_t rep,
                                        struct ChanallocTrace **out);

/**
 * Runs every replication and writes all output files into the configured
 * directory.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum ChanallocStatus chanalloc_run_experiment(const struct ChanallocConfig *config);

/**
 * Slots recorded in the trace.
 *
 * # Safety
 * `trace` must be a live handle or null (giving 0).
 */
uint64_t chanalloc_trace_len(const struct ChanallocTrace *trace);

/**
 * Packets started within the horizon.
 *
 * # Safety
 * `trace` must be a live handle or null (giving 0).
 */
uint64_t chanalloc_trace_packets(const struct ChanallocTrace *trace);

/**
 * First packet whose exploitation allocation is optimal, 0 if none.
 *
 * # Safety
 * `trace` must be a live handle or null (giving 0).
 */
uint64_t chanalloc_trace_convergence_packet(const struct ChanallocTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
enum ChanallocStatus chanalloc_trace_summary(const struct ChanallocTrace *trace,
                                             struct ChanallocTraceSummary *out);

/**
 * Cumulative realized and pseudo regret after slot `t` (1-based).
 *
 * # Safety
 * `trace` must be a live handle; the outputs valid pointers.
 */
enum ChanallocStatus chanalloc_trace_regret_at(const struct ChanallocTrace *trace,
                                               uint64_t t,
                                               double *out_regret,
                                               double *out_pseudo_regret);

/**
 * Writes the per-slot, per-link CSV trace to `path`.
 *
 * # Safety
 * `trace` must be a live handle and `path` a NUL-terminated string.
 */
enum ChanallocStatus chanalloc_trace_write_csv(const struct ChanallocTrace *trace,
                                               const char *path);

/**
 * # Safety
 * `trace` must be a handle from this library or null; it is invalid afterwards.
 */
void chanalloc_trace_free(struct ChanallocTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANALLOC_H */
