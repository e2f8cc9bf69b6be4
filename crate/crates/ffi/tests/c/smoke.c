/* SPDX-License-Identifier: Apache-2.0 */
#include <stdio.h>
#include <string.h>

#include "tzperf.h"

#define CHECK(expr)                                                        \
  do {                                                                     \
    TzStatus s_ = (expr);                                                  \
    if (s_ != TZ_STATUS_OK) {                                              \
      const char *m_ = tz_last_error();                                    \
      fprintf(stderr, "%s: status %d: %s\n", #expr, s_, m_ ? m_ : "?");    \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  TzKvStore *kv = NULL;
  CHECK(tz_kv_new(0, &kv));
  CHECK(tz_kv_put(kv, 42, (const uint8_t *)"hello", 5));
  char buf[16];
  size_t len = 0;
  CHECK(tz_kv_get(kv, 42, (uint8_t *)buf, sizeof buf, &len));
  if (len != 5 || memcmp(buf, "hello", 5) != 0) return 2;
  if (tz_kv_get(kv, 7, (uint8_t *)buf, sizeof buf, &len) != TZ_STATUS_NOT_FOUND) return 3;
  tz_kv_free(kv);

  TzPowerSample trace[] = {{0.0, 5.0}, {5.0, 5.0}, {10.0, 5.0}};
  TzEnergyReport energy;
  CHECK(tz_integrate_energy(trace, 3, 0.0, 10.0, &energy));
  if (energy.energy != 50.0) return 4;

  TzServer *srv = NULL;
  CHECK(tz_server_start("127.0.0.1", 0, &srv));
  uint16_t port = 0;
  CHECK(tz_server_port(srv, &port));

  TzConfig *cfg = NULL;
  CHECK(tz_config_new(&cfg));
  CHECK(tz_config_set_target(cfg, "127.0.0.1", port));
  CHECK(tz_config_set_fixed_bytes(cfg, 1 << 20));
  CHECK(tz_config_set_execution(cfg, TZ_EXECUTION_BOUNDARY, TZ_SHARE_MODE_PARTIAL, 0.0));
  TzRunResult run;
  CHECK(tz_run_client(cfg, NULL, &run));
  double bps = 0;
  CHECK(tz_derive_throughput(&run, &bps));
  uint64_t received = 0;
  uint32_t digest = 0;
  CHECK(tz_server_next_flow(srv, 10.0, &received, &digest));
  tz_config_free(cfg);
  tz_server_free(srv);
  if (!run.has_boundary || run.crossings == 0) return 5;
  if (received != run.bytes_transferred || digest != run.digest) return 6;
  printf("tzperf %s: %llu bytes, %llu crossings, %.1f Mbit/s\n", tz_version(),
         (unsigned long long)run.bytes_transferred,
         (unsigned long long)run.crossings, bps / 1e6);
  return 0;
}
