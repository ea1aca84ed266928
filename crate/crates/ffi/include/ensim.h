/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef ENSIM_H
#define ENSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EnsimStatus {
  ENSIM_STATUS_OK = 0,
  ENSIM_STATUS_NULL_ARGUMENT = 1,
  ENSIM_STATUS_INVALID_UTF8 = 2,
  ENSIM_STATUS_INVALID_SCENARIO = 3,
  ENSIM_STATUS_INVALID_ARGUMENT = 4,
  ENSIM_STATUS_INTERNAL = 5,
} EnsimStatus;

/**
 * The report of a finished run.
 */
typedef struct EnsimReport EnsimReport;

/**
 * A validated scenario.
 */
typedef struct EnsimScenario EnsimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses and validates a scenario from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EnsimStatus ensim_scenario_from_json(const char *json, struct EnsimScenario **out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EnsimStatus ensim_scenario_load(const char *path, struct EnsimScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library, not yet freed.
 */
void ensim_scenario_free(struct EnsimScenario *scenario);

/**
 * Runs a scenario with its own seed.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum EnsimStatus ensim_run(const struct EnsimScenario *scenario, struct EnsimReport **out);

/**
 * Runs a scenario with `seed` in place of the scenario's seed.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum EnsimStatus ensim_run_with_seed(const struct EnsimScenario *scenario,
                                     uint64_t seed,
                                     struct EnsimReport **out);

/**
 * # Safety
 * `report` must be null or a handle from this library, not yet freed.
 */
void ensim_report_free(struct EnsimReport *report);

/**
 * The full report as JSON with sorted keys.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum EnsimStatus ensim_report_to_json(const struct EnsimReport *report, char **out);

/**
 * The per-device CSV summary.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum EnsimStatus ensim_report_to_csv(const struct EnsimReport *report, char **out);

/**
 * Number of notifications raised during the run; 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t ensim_report_notification_count(const struct EnsimReport *report);

/**
 * Whether the run's notifications equal the oracle's; false for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
bool ensim_report_agrees_with_oracle(const struct EnsimReport *report);

/**
 * Derives the identifier broadcast in `interval` of `day` from a 16-byte key.
 *
 * # Safety
 * `key` must point to 16 readable bytes and `out` to 16 writable bytes.
 */
enum EnsimStatus ensim_derive_epi(const uint8_t *key,
                                  uint32_t day,
                                  uint32_t interval,
                                  uint32_t rotation_minutes,
                                  uint8_t *out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ensim_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ensim_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENSIM_H */
