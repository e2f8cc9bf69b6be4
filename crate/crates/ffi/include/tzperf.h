/* SPDX-License-Identifier: Apache-2.0 */

#ifndef TZPERF_H
#define TZPERF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TzStatus {
  TZ_STATUS_OK = 0,
  TZ_STATUS_NULL_POINTER = 1,
  TZ_STATUS_INVALID_ARGUMENT = 2,
  TZ_STATUS_INVALID_UTF8 = 3,
  TZ_STATUS_NOT_FOUND = 4,
  TZ_STATUS_OUT_OF_MEMORY = 5,
  TZ_STATUS_BUFFER_TOO_SMALL = 6,
  TZ_STATUS_IO = 7,
  TZ_STATUS_RUN_FAILED = 8,
  TZ_STATUS_PANIC = 9,
} TzStatus;

typedef enum TzProtocol {
  TZ_PROTOCOL_TCP = 0,
  TZ_PROTOCOL_UDP = 1,
} TzProtocol;

typedef enum TzExecution {
  TZ_EXECUTION_DIRECT = 0,
  TZ_EXECUTION_BOUNDARY = 1,
} TzExecution;

typedef enum TzShareMode {
  TZ_SHARE_MODE_WHOLE = 0,
  TZ_SHARE_MODE_PARTIAL = 1,
  TZ_SHARE_MODE_TEMPORARY = 2,
} TzShareMode;

/**
 * Traffic-client configuration.
 */
typedef struct TzConfig TzConfig;

/**
 * Key-value store with an optional heap cap.
 */
typedef struct TzKvStore TzKvStore;

/**
 * Loopback or network receiver running on background threads.
 */
typedef struct TzServer TzServer;

/**
 * Outcome of one traffic-client run.
 */
typedef struct TzRunResult {
  uint64_t transmit_calls;
  uint64_t bytes_transferred;
  double time_in_transmit;
  double total_runtime;
  uint32_t digest;
  uint64_t late_deadlines;
  bool underrun;
  /**
   * Non-zero when the boundary counters below are meaningful.
   */
  bool has_boundary;
  uint64_t crossings;
  double injected_cost_total;
  uint64_t rpc_count;
  uint64_t bytes_copied;
  double started_unix;
  double finished_unix;
} TzRunResult;

typedef struct TzPowerSample {
  /**
   * Unix seconds.
   */
  double timestamp;
  /**
   * Watts.
   */
  double power;
} TzPowerSample;

typedef struct TzEnergyReport {
  double t_start;
  double t_end;
  double energy;
  size_t sample_count;
  double mean_power;
} TzEnergyReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next tzperf call on the same thread.
 */
const char *tz_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tz_version(void);

/**
 * New configuration with the library defaults: TCP to 127.0.0.1:5201 for
 * 10 s, 128 KiB chunks, direct execution.
 *
 * # Safety
 * `out` must be writable.
 */
enum TzStatus tz_config_new(struct TzConfig **out);

/**
 * # Safety
 * `config` must come from [`tz_config_new`] and not be used afterwards.
 */
void tz_config_free(struct TzConfig *config);

/**
 * # Safety
 * `config` must be a live handle and `host` a NUL-terminated string.
 */
enum TzStatus tz_config_set_target(struct TzConfig *config, const char *host, uint16_t port);

/**
 * Stop after `total_bytes` bytes.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_fixed_bytes(struct TzConfig *config, uint64_t total_bytes);

/**
 * Send as fast as possible for `seconds`.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_fixed_duration(struct TzConfig *config, double seconds);

/**
 * Pace at `bitrate` bit/s for `seconds`.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_constant_rate(struct TzConfig *config,
                                          uint64_t bitrate,
                                          double seconds);

/**
 * `protocol` takes a `TzProtocol` value.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_transport(struct TzConfig *config,
                                      uint32_t protocol,
                                      size_t chunk_size,
                                      size_t socket_buffer_size);

/**
 * `execution` and `shared_mode` take `TzExecution` and `TzShareMode` values.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_execution(struct TzConfig *config,
                                      uint32_t execution,
                                      uint32_t shared_mode,
                                      double switch_cost);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_set_seed(struct TzConfig *config, uint64_t seed);

/**
 * Checks the configuration without running it.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum TzStatus tz_config_validate(const struct TzConfig *config);

/**
 * Runs the traffic client. Boundary runs relay socket calls to a helper
 * thread, or to `supplicant` (path to the `tzperf` binary) when it is not
 * null. A transport failure mid-run returns `RUN_FAILED` with `out` holding
 * the partial counters.
 *
 * # Safety
 * `config` must be a live handle, `out` writable, `supplicant` null or a
 * NUL-terminated string.
 */
enum TzStatus tz_run_client(const struct TzConfig *config,
                            const char *supplicant,
                            struct TzRunResult *out);

/**
 * Achieved throughput of a run in bit/s.
 *
 * # Safety
 * `result` must be readable and `bits_per_second` writable.
 */
enum TzStatus tz_derive_throughput(const struct TzRunResult *result, double *bits_per_second);

/**
 * Trapezoidal energy over `[t_start, t_end]` from `count` samples sorted by
 * timestamp.
 *
 * # Safety
 * `samples` must point to `count` readable samples and `out` be writable.
 */
enum TzStatus tz_integrate_energy(const struct TzPowerSample *samples,
                                  size_t count,
                                  double t_start,
                                  double t_end,
                                  struct TzEnergyReport *out);

/**
 * New empty store. Values count against `heap_limit` bytes; 0 means no cap.
 *
 * # Safety
 * `out` must be writable.
 */
enum TzStatus tz_kv_new(size_t heap_limit, struct TzKvStore **out);

/**
 * # Safety
 * `store` must come from [`tz_kv_new`] and not be used afterwards.
 */
void tz_kv_free(struct TzKvStore *store);

/**
 * Inserts or replaces `key`.
 *
 * # Safety
 * `store` must be a live handle and `value` point to `len` readable bytes.
 */
enum TzStatus tz_kv_put(struct TzKvStore *store, uint64_t key, const uint8_t *value, size_t len);

/**
 * Copies the value of `key` into `buf`. `*len` is always set to the value
 * length; `BUFFER_TOO_SMALL` means nothing was copied.
 *
 * # Safety
 * `store` must be a live handle, `buf` writable for `capacity` bytes (or
 * null with `capacity` 0) and `len` writable.
 */
enum TzStatus tz_kv_get(const struct TzKvStore *store,
                        uint64_t key,
                        uint8_t *buf,
                        size_t capacity,
                        size_t *len);

/**
 * # Safety
 * `store` must be a live handle.
 */
enum TzStatus tz_kv_del(struct TzKvStore *store, uint64_t key);

/**
 * # Safety
 * `store` must be a live handle and `count` writable.
 */
enum TzStatus tz_kv_len(const struct TzKvStore *store, size_t *count);

/**
 * Starts a receiver on `host`. `port` 0 picks a free port; read it back
 * with [`tz_server_port`].
 *
 * # Safety
 * `host` must be a NUL-terminated string and `out` writable.
 */
enum TzStatus tz_server_start(const char *host, uint16_t port, struct TzServer **out);

/**
 * # Safety
 * `server` must be a live handle and `port` writable.
 */
enum TzStatus tz_server_port(const struct TzServer *server, uint16_t *port);

/**
 * Waits up to `timeout` seconds for the next finished flow and reports the
 * bytes it received and their CRC-32.
 *
 * # Safety
 * `server` must be a live handle; `bytes` and `digest` writable.
 */
enum TzStatus tz_server_next_flow(const struct TzServer *server,
                                  double timeout,
                                  uint64_t *bytes,
                                  uint32_t *digest);

/**
 * Stops the receiver and releases the handle.
 *
 * # Safety
 * `server` must come from [`tz_server_start`] and not be used afterwards.
 */
void tz_server_free(struct TzServer *server);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TZPERF_H */
