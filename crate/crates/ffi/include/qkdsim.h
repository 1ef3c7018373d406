#ifndef QKDSIM_H
#define QKDSIM_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum QkdsimStatus {
  QKDSIM_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  QKDSIM_STATUS_NULL = 1,
  /**
   * A string argument was not UTF-8.
   */
  QKDSIM_STATUS_UTF8 = 2,
  QKDSIM_STATUS_IO = 3,
  QKDSIM_STATUS_PARSE = 4,
  QKDSIM_STATUS_VALIDATION = 5,
  /**
   * Argument outside the function's domain.
   */
  QKDSIM_STATUS_DOMAIN = 6,
  QKDSIM_STATUS_CALIBRATION = 7,
  /**
   * The run finished with every path failed.
   */
  QKDSIM_STATUS_EXHAUSTED = 8,
  QKDSIM_STATUS_PANIC = 9,
} QkdsimStatus;

/**
 * An optical switch that speaks the line protocol.
 */
typedef struct QkdsimSwitch QkdsimSwitch;

/**
 * A loaded topology.
 */
typedef struct QkdsimTopology QkdsimTopology;

/**
 * Physical constants of one link.
 */
typedef struct QkdsimChannelParams {
  double sifted_rate_cps;
  double intrinsic_error;
  double dark_rate_cps;
  double noise_coupling_cps_per_mw;
  double suppression_db;
  double ec_efficiency;
  /**
   * 1 for the linear noise model.
   */
  double noise_exponent;
} QkdsimChannelParams;

/**
 * Outcome of [`qkdsim_run`].
 */
typedef struct QkdsimRunSummary {
  uint32_t polls;
  uint32_t episodes;
  bool exhausted;
  /**
   * Seconds from start to the first key; negative if never reached.
   */
  double first_init_s;
} QkdsimRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *qkdsim_last_error(void);

/**
 * Binary entropy of `x` in bits; `x` must lie in [0, 1].
 *
 * # Safety
 *
 * `result` must be null or point to writable memory.
 */
enum QkdsimStatus qkdsim_binary_entropy(double x, double *result);

/**
 * QBER at which the secret key rate reaches zero.
 *
 * # Safety
 *
 * `result` must be null or point to writable memory.
 */
enum QkdsimStatus qkdsim_abort_qber(double ec_efficiency, double *result);

/**
 * Mean QBER under an attacker at `attack_power_dbm` (-inf for none).
 *
 * # Safety
 *
 * Pointers must be null or valid for their types.
 */
enum QkdsimStatus qkdsim_channel_qber(const struct QkdsimChannelParams *params_ptr,
                                      double attack_power_dbm,
                                      double *result);

/**
 * Mean secret key rate in bit/s under an attacker at `attack_power_dbm`.
 *
 * # Safety
 *
 * Pointers must be null or valid for their types.
 */
enum QkdsimStatus qkdsim_channel_skr(const struct QkdsimChannelParams *params_ptr,
                                     double attack_power_dbm,
                                     double *result);

/**
 * Loads a topology file.
 *
 * # Safety
 *
 * `path` must be null or NUL-terminated; `topology` null or writable.
 */
enum QkdsimStatus qkdsim_topology_load(const char *path, struct QkdsimTopology **topology);

/**
 * Parses a topology from JSON text.
 *
 * # Safety
 *
 * `json` must be null or NUL-terminated; `topology` null or writable.
 */
enum QkdsimStatus qkdsim_topology_from_json(const char *json, struct QkdsimTopology **topology);

/**
 * Releases a topology. Null is ignored.
 *
 * # Safety
 *
 * `topology` must be null or a handle from this library not yet freed.
 */
void qkdsim_topology_free(struct QkdsimTopology *topology);

/**
 * Channel parameters of a link, after any calibration.
 *
 * # Safety
 *
 * Pointers must be null or valid; `topology` a live handle.
 */
enum QkdsimStatus qkdsim_topology_link_params(const struct QkdsimTopology *topology,
                                              const char *link,
                                              struct QkdsimChannelParams *result);

/**
 * Runs a scenario file under the simulated clock and writes the outputs
 * to `out_dir`. Returns `QKDSIM_EXHAUSTED` if every path failed; the
 * outputs and `summary` are still filled in.
 *
 * # Safety
 *
 * Pointers must be null or valid; strings NUL-terminated; `topology` a live handle.
 */
enum QkdsimStatus qkdsim_run(const struct QkdsimTopology *topology,
                             const char *scenario_path,
                             uint64_t seed,
                             const char *out_dir,
                             bool deterministic,
                             struct QkdsimRunSummary *summary);

/**
 * Creates a switch with `ports` ports numbered from 1.
 *
 * # Safety
 *
 * `id` must be null or NUL-terminated; `switch` null or writable.
 */
enum QkdsimStatus qkdsim_switch_new(const char *id, uint32_t ports, struct QkdsimSwitch **switch_);

/**
 * Releases a switch. Null is ignored.
 *
 * # Safety
 *
 * `switch` must be null or a handle from this library not yet freed.
 */
void qkdsim_switch_free(struct QkdsimSwitch *switch_);

/**
 * Handles one protocol line and returns the reply line (no newline).
 * Release the reply with [`qkdsim_string_free`].
 *
 * # Safety
 *
 * Pointers must be null or valid; `line` NUL-terminated; `switch` a live handle.
 */
enum QkdsimStatus qkdsim_switch_handle_line(const struct QkdsimSwitch *switch_,
                                            const char *line,
                                            char **reply);

/**
 * Committed cross-connects as a JSON object from input to output port.
 * Release the result with [`qkdsim_string_free`].
 *
 * # Safety
 *
 * Pointers must be null or valid; `switch` a live handle.
 */
enum QkdsimStatus qkdsim_switch_table_json(const struct QkdsimSwitch *switch_, char **json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 *
 * `s` must be null or a string from this library not yet freed.
 */
void qkdsim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QKDSIM_H */
