// SPDX-License-Identifier: Apache-2.0

//! C ABI over the tzperf library.
//!
//! Every function returns a [`TzStatus`]. On failure a message is available
//! from [`tz_last_error`] on the same thread. Handles are opaque and owned by
//! the caller, who releases them with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;
use std::time::Duration;

use tzperf::boundary::RelayMode;
use tzperf::config::{validate_config, Execution, Protocol, RunConfig, ShareMode, StopCondition};
use tzperf::energy::{integrate_energy, PowerSample};
use tzperf::kvstore::{KvError, KvStore};
use tzperf::memory::HeapBudget;
use tzperf::metrics::{derive_throughput, MetricsError, TransferMetrics};
use tzperf::server::{serve, ServerConfig, ServerHandle};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    NotFound = 4,
    OutOfMemory = 5,
    BufferTooSmall = 6,
    Io = 7,
    RunFailed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzExecution {
    Direct = 0,
    Boundary = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzShareMode {
    Whole = 0,
    Partial = 1,
    Temporary = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzProtocol {
    Tcp = 0,
    Udp = 1,
}

/// Outcome of one traffic-client run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TzRunResult {
    pub transmit_calls: u64,
    pub bytes_transferred: u64,
    pub time_in_transmit: f64,
    pub total_runtime: f64,
    pub digest: u32,
    pub late_deadlines: u64,
    pub underrun: bool,
    /// Non-zero when the boundary counters below are meaningful.
    pub has_boundary: bool,
    pub crossings: u64,
    pub injected_cost_total: f64,
    pub rpc_count: u64,
    pub bytes_copied: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TzPowerSample {
    /// Unix seconds.
    pub timestamp: f64,
    /// Watts.
    pub power: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TzEnergyReport {
    pub t_start: f64,
    pub t_end: f64,
    pub energy: f64,
    pub sample_count: usize,
    pub mean_power: f64,
}

/// Traffic-client configuration.
pub struct TzConfig(RunConfig);

/// Key-value store with an optional heap cap.
pub struct TzKvStore(KvStore);

/// Loopback or network receiver running on background threads.
pub struct TzServer(Option<ServerHandle>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: TzStatus, message: impl Into<String>) -> TzStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> TzStatus) -> TzStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TzStatus::Panic, msg)
        }
    }
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(TzStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
    (mut $p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(TzStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TzStatus> {
    if p.is_null() {
        return Err(fail(TzStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TzStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next tzperf call on the same thread.
#[no_mangle]
pub extern "C" fn tz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with the library defaults: TCP to 127.0.0.1:5201 for
/// 10 s, 128 KiB chunks, direct execution.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_config_new(out: *mut *mut TzConfig) -> TzStatus {
    guard(|| {
        let out = deref!(mut out);
        *out = Box::into_raw(Box::new(TzConfig(RunConfig::default())));
        TzStatus::Ok
    })
}

/// # Safety
/// `config` must come from [`tz_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tz_config_free(config: *mut TzConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle and `host` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_target(
    config: *mut TzConfig,
    host: *const c_char,
    port: u16,
) -> TzStatus {
    guard(|| {
        let cfg = deref!(mut config);
        let host = match c_str(host, "host") {
            Ok(h) => h,
            Err(s) => return s,
        };
        cfg.0.host = host.to_string();
        cfg.0.port = port;
        TzStatus::Ok
    })
}

/// Stop after `total_bytes` bytes.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_fixed_bytes(
    config: *mut TzConfig,
    total_bytes: u64,
) -> TzStatus {
    guard(|| {
        deref!(mut config).0.stop = StopCondition::FixedBytes { total_bytes };
        TzStatus::Ok
    })
}

/// Send as fast as possible for `seconds`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_fixed_duration(
    config: *mut TzConfig,
    seconds: f64,
) -> TzStatus {
    guard(|| {
        deref!(mut config).0.stop = StopCondition::FixedDuration { duration: seconds };
        TzStatus::Ok
    })
}

/// Pace at `bitrate` bit/s for `seconds`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_constant_rate(
    config: *mut TzConfig,
    bitrate: u64,
    seconds: f64,
) -> TzStatus {
    guard(|| {
        deref!(mut config).0.stop = StopCondition::ConstantRate {
            bitrate,
            duration: seconds,
        };
        TzStatus::Ok
    })
}

/// `protocol` takes a `TzProtocol` value.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_transport(
    config: *mut TzConfig,
    protocol: u32,
    chunk_size: usize,
    socket_buffer_size: usize,
) -> TzStatus {
    guard(|| {
        let cfg = deref!(mut config);
        cfg.0.protocol = match protocol {
            p if p == TzProtocol::Tcp as u32 => Protocol::Tcp,
            p if p == TzProtocol::Udp as u32 => Protocol::Udp,
            p => return fail(TzStatus::InvalidArgument, format!("unknown protocol {p}")),
        };
        cfg.0.chunk_size = chunk_size;
        cfg.0.socket_buffer_size = socket_buffer_size;
        TzStatus::Ok
    })
}

/// `execution` and `shared_mode` take `TzExecution` and `TzShareMode` values.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_execution(
    config: *mut TzConfig,
    execution: u32,
    shared_mode: u32,
    switch_cost: f64,
) -> TzStatus {
    guard(|| {
        let cfg = deref!(mut config);
        cfg.0.execution = match execution {
            e if e == TzExecution::Direct as u32 => Execution::Direct,
            e if e == TzExecution::Boundary as u32 => Execution::Boundary,
            e => return fail(TzStatus::InvalidArgument, format!("unknown execution {e}")),
        };
        cfg.0.shared_mode = match shared_mode {
            m if m == TzShareMode::Whole as u32 => ShareMode::Whole,
            m if m == TzShareMode::Partial as u32 => ShareMode::Partial,
            m if m == TzShareMode::Temporary as u32 => ShareMode::Temporary,
            m => return fail(TzStatus::InvalidArgument, format!("unknown share mode {m}")),
        };
        cfg.0.switch_cost = switch_cost;
        TzStatus::Ok
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_set_seed(config: *mut TzConfig, seed: u64) -> TzStatus {
    guard(|| {
        deref!(mut config).0.seed = seed;
        TzStatus::Ok
    })
}

/// Checks the configuration without running it.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_config_validate(config: *const TzConfig) -> TzStatus {
    guard(|| match validate_config(&deref!(config).0) {
        Ok(_) => TzStatus::Ok,
        Err(e) => fail(TzStatus::InvalidArgument, e.to_string()),
    })
}

/// Runs the traffic client. Boundary runs relay socket calls to a helper
/// thread, or to `supplicant` (path to the `tzperf` binary) when it is not
/// null. A transport failure mid-run returns `RUN_FAILED` with `out` holding
/// the partial counters.
///
/// # Safety
/// `config` must be a live handle, `out` writable, `supplicant` null or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tz_run_client(
    config: *const TzConfig,
    supplicant: *const c_char,
    out: *mut TzRunResult,
) -> TzStatus {
    guard(|| {
        let cfg = deref!(config);
        let out = deref!(mut out);
        let relay = if supplicant.is_null() {
            RelayMode::Thread
        } else {
            match c_str(supplicant, "supplicant") {
                Ok(p) => RelayMode::Process {
                    program: PathBuf::from(p),
                },
                Err(s) => return s,
            }
        };
        let run = match tzperf::client::run_client(&cfg.0, relay) {
            Ok(r) => r,
            Err(tzperf::client::ClientError::Config(e)) => {
                return fail(TzStatus::InvalidArgument, e.to_string())
            }
            Err(e) => return fail(TzStatus::RunFailed, e.to_string()),
        };
        let m = &run.metrics;
        let b = run.boundary.unwrap_or_default();
        *out = TzRunResult {
            transmit_calls: m.transmit_calls,
            bytes_transferred: m.bytes_transferred,
            time_in_transmit: m.time_in_transmit,
            total_runtime: m.total_runtime,
            digest: m.digest,
            late_deadlines: m.late_deadlines,
            underrun: m.underrun,
            has_boundary: run.boundary.is_some(),
            crossings: b.crossings,
            injected_cost_total: b.injected_cost_total,
            rpc_count: b.rpc_count,
            bytes_copied: b.bytes_copied,
            started_unix: run.started_unix,
            finished_unix: run.finished_unix,
        };
        match &m.error {
            Some(e) => fail(TzStatus::RunFailed, e.clone()),
            None => TzStatus::Ok,
        }
    })
}

/// Achieved throughput of a run in bit/s.
///
/// # Safety
/// `result` must be readable and `bits_per_second` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_derive_throughput(
    result: *const TzRunResult,
    bits_per_second: *mut f64,
) -> TzStatus {
    guard(|| {
        let r = deref!(result);
        let bps = deref!(mut bits_per_second);
        let m = TransferMetrics {
            bytes_transferred: r.bytes_transferred,
            total_runtime: r.total_runtime,
            ..TransferMetrics::default()
        };
        match derive_throughput(&m) {
            Ok(v) => {
                *bps = v;
                TzStatus::Ok
            }
            Err(e @ MetricsError::ZeroRuntime) => fail(TzStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Trapezoidal energy over `[t_start, t_end]` from `count` samples sorted by
/// timestamp.
///
/// # Safety
/// `samples` must point to `count` readable samples and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_integrate_energy(
    samples: *const TzPowerSample,
    count: usize,
    t_start: f64,
    t_end: f64,
    out: *mut TzEnergyReport,
) -> TzStatus {
    guard(|| {
        let out = deref!(mut out);
        if samples.is_null() && count > 0 {
            return fail(TzStatus::NullPointer, "samples is null");
        }
        let raw = if count == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(samples, count)
        };
        if raw.windows(2).any(|w| {
            w[0].timestamp
                .partial_cmp(&w[1].timestamp)
                .is_none_or(|o| o.is_gt())
        }) {
            return fail(
                TzStatus::InvalidArgument,
                "samples are not sorted by timestamp",
            );
        }
        let trace: Vec<PowerSample> = raw
            .iter()
            .map(|s| PowerSample {
                timestamp: s.timestamp,
                power: s.power,
            })
            .collect();
        match integrate_energy(&trace, t_start, t_end) {
            Ok(r) => {
                *out = TzEnergyReport {
                    t_start: r.t_start,
                    t_end: r.t_end,
                    energy: r.energy,
                    sample_count: r.sample_count,
                    mean_power: r.mean_power,
                };
                TzStatus::Ok
            }
            Err(e) => fail(TzStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// New empty store. Values count against `heap_limit` bytes; 0 means no cap.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_new(heap_limit: usize, out: *mut *mut TzKvStore) -> TzStatus {
    guard(|| {
        let out = deref!(mut out);
        let budget = if heap_limit == 0 {
            HeapBudget::unlimited()
        } else {
            HeapBudget::new(heap_limit)
        };
        *out = Box::into_raw(Box::new(TzKvStore(KvStore::with_budget(budget))));
        TzStatus::Ok
    })
}

/// # Safety
/// `store` must come from [`tz_kv_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_free(store: *mut TzKvStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Inserts or replaces `key`.
///
/// # Safety
/// `store` must be a live handle and `value` point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_put(
    store: *mut TzKvStore,
    key: u64,
    value: *const u8,
    len: usize,
) -> TzStatus {
    guard(|| {
        let kv = deref!(mut store);
        if value.is_null() {
            return fail(TzStatus::NullPointer, "value is null");
        }
        match kv.0.put(key, slice::from_raw_parts(value, len)) {
            Ok(()) => TzStatus::Ok,
            Err(e @ KvError::OutOfMemory(_)) => fail(TzStatus::OutOfMemory, e.to_string()),
            Err(e) => fail(TzStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Copies the value of `key` into `buf`. `*len` is always set to the value
/// length; `BUFFER_TOO_SMALL` means nothing was copied.
///
/// # Safety
/// `store` must be a live handle, `buf` writable for `capacity` bytes (or
/// null with `capacity` 0) and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_get(
    store: *const TzKvStore,
    key: u64,
    buf: *mut u8,
    capacity: usize,
    len: *mut usize,
) -> TzStatus {
    guard(|| {
        let kv = deref!(store);
        let len = deref!(mut len);
        let Some(value) = kv.0.lookup(key) else {
            *len = 0;
            return fail(TzStatus::NotFound, format!("key {key} not found"));
        };
        *len = value.len();
        if value.len() > capacity || buf.is_null() {
            return fail(
                TzStatus::BufferTooSmall,
                format!("value holds {} bytes, buffer {capacity}", value.len()),
            );
        }
        ptr::copy_nonoverlapping(value.as_ptr(), buf, value.len());
        TzStatus::Ok
    })
}

/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_del(store: *mut TzKvStore, key: u64) -> TzStatus {
    guard(|| {
        if deref!(mut store).0.del(key) {
            TzStatus::Ok
        } else {
            fail(TzStatus::NotFound, format!("key {key} not found"))
        }
    })
}

/// # Safety
/// `store` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_kv_len(store: *const TzKvStore, count: *mut usize) -> TzStatus {
    guard(|| {
        *deref!(mut count) = deref!(store).0.len();
        TzStatus::Ok
    })
}

/// Starts a receiver on `host`. `port` 0 picks a free port; read it back
/// with [`tz_server_port`].
///
/// # Safety
/// `host` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_server_start(
    host: *const c_char,
    port: u16,
    out: *mut *mut TzServer,
) -> TzStatus {
    guard(|| {
        let out = deref!(mut out);
        let host = match c_str(host, "host") {
            Ok(h) => h,
            Err(s) => return s,
        };
        let cfg = ServerConfig {
            host: host.to_string(),
            port,
            ..ServerConfig::default()
        };
        match serve(&cfg) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(TzServer(Some(h))));
                TzStatus::Ok
            }
            Err(e) => fail(TzStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `server` must be a live handle and `port` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_server_port(server: *const TzServer, port: *mut u16) -> TzStatus {
    guard(|| {
        let srv = deref!(server);
        let port = deref!(mut port);
        match &srv.0 {
            Some(h) => {
                *port = h.tcp_addr().port();
                TzStatus::Ok
            }
            None => fail(TzStatus::InvalidArgument, "server stopped"),
        }
    })
}

/// Waits up to `timeout` seconds for the next finished flow and reports the
/// bytes it received and their CRC-32.
///
/// # Safety
/// `server` must be a live handle; `bytes` and `digest` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_server_next_flow(
    server: *const TzServer,
    timeout: f64,
    bytes: *mut u64,
    digest: *mut u32,
) -> TzStatus {
    guard(|| {
        let srv = deref!(server);
        let bytes = deref!(mut bytes);
        let digest = deref!(mut digest);
        if !(timeout >= 0.0 && timeout.is_finite()) {
            return fail(
                TzStatus::InvalidArgument,
                "timeout must be finite and non-negative",
            );
        }
        let Some(h) = &srv.0 else {
            return fail(TzStatus::InvalidArgument, "server stopped");
        };
        match h.next_record_timeout(Duration::from_secs_f64(timeout)) {
            Some(flow) => {
                *bytes = flow.metrics.bytes_received;
                *digest = flow.metrics.digest;
                TzStatus::Ok
            }
            None => fail(TzStatus::NotFound, "no flow finished in time"),
        }
    })
}

/// Stops the receiver and releases the handle.
///
/// # Safety
/// `server` must come from [`tz_server_start`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tz_server_free(server: *mut TzServer) {
    if !server.is_null() {
        let mut srv = Box::from_raw(server);
        if let Some(h) = srv.0.take() {
            let _ = catch_unwind(AssertUnwindSafe(|| h.shutdown()));
        }
    }
}
