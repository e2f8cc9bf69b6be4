// SPDX-License-Identifier: Apache-2.0

//! Traffic client: generates dummy traffic toward a server until a stop
//! condition holds, pacing constant-rate runs against absolute deadlines.
//!
//! The measurement loop is generic over [`Transmitter`] so the same code runs
//! natively ([`Execution::Direct`]) and as the `iperftz` trusted app behind the
//! emulated boundary ([`Execution::Boundary`]).

use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use socket2::SockRef;
use thiserror::Error;

use crate::apps::{self, IPERF_APP};
use crate::boundary::{
    BoundaryStats, Context, ContextConfig, Param, RelayMode, TeeError, TeeSocket, TrustedEnv,
};
use crate::config::{validate_config, ConfigError, Execution, Protocol, RunConfig, StopCondition};
use crate::memory::{BudgetBuf, HeapBudget, OutOfMemory};
use crate::metrics::TransferMetrics;
use crate::timing::wait_until;

/// Pacing intervals shorter than this are batched.
pub const MIN_PACING_INTERVAL: Duration = Duration::from_millis(1);

/// Fills `buf` with the deterministic byte stream for `seed`.
pub fn fill_dummy(buf: &mut [u8], seed: u64) {
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(buf);
}

/// Allocates `size` bytes from `budget` and fills them with seeded
/// pseudo-random data.
pub fn fill_dummy_buffer(
    size: usize,
    seed: u64,
    budget: &HeapBudget,
) -> Result<BudgetBuf, OutOfMemory> {
    let mut buf = budget.alloc(size)?;
    fill_dummy(&mut buf, seed);
    Ok(buf)
}

/// Seconds one chunk occupies at `bitrate`.
pub fn chunk_interval(bitrate: u64, chunk_size: usize) -> f64 {
    chunk_size as f64 * 8.0 / bitrate as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaceStep {
    /// How long to wait before sending; `None` when the deadline has passed.
    pub wait: Option<Duration>,
    /// The deadline for the following chunk.
    pub next_deadline: Instant,
}

/// One deadline-pacing step. The next deadline is derived from the current
/// deadline, not from `now`, so a late send does not shift later deadlines.
pub fn pace(deadline: Instant, now: Instant, bitrate: u64, chunk_size: usize) -> PaceStep {
    let interval = Duration::from_secs_f64(chunk_interval(bitrate, chunk_size));
    PaceStep {
        wait: deadline
            .checked_duration_since(now)
            .filter(|d| !d.is_zero()),
        next_deadline: deadline + interval,
    }
}

/// Absolute-deadline pacer. Deadline `k` is `start + k * interval`, computed
/// from the index so rounding never accumulates.
#[derive(Debug, Clone)]
pub struct Pacer {
    start: Instant,
    /// Seconds per batch.
    interval: f64,
    batch: u32,
    index: u64,
    late: u64,
}

impl Pacer {
    pub fn new(start: Instant, bitrate: u64, chunk_size: usize) -> Pacer {
        Pacer::every(start, chunk_interval(bitrate, chunk_size))
    }

    /// One event every `per_event` seconds.
    pub fn every(start: Instant, per_event: f64) -> Pacer {
        let per_chunk = per_event;
        let min = MIN_PACING_INTERVAL.as_secs_f64();
        let batch = if per_chunk < min {
            (min / per_chunk).ceil().min(u32::MAX as f64) as u32
        } else {
            1
        };
        Pacer {
            start,
            interval: per_chunk * f64::from(batch),
            batch,
            index: 0,
            late: 0,
        }
    }

    /// Chunks sent per deadline.
    pub fn batch(&self) -> u32 {
        self.batch
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval)
    }

    pub fn deadline(&self, k: u64) -> Instant {
        self.start + Duration::from_secs_f64(self.interval * k as f64)
    }

    /// Offset of the pending deadline from the start.
    pub fn next_offset(&self) -> f64 {
        self.interval * self.index as f64
    }

    pub fn next_deadline(&self) -> Instant {
        self.deadline(self.index)
    }

    /// Waits for the pending deadline (or returns at once if it passed) and
    /// advances to the next one.
    pub fn wait_next(&mut self) {
        let deadline = self.next_deadline();
        let now = Instant::now();
        if now > deadline + self.interval() {
            self.late += 1;
        }
        wait_until(deadline);
        self.index += 1;
    }

    /// Deadlines that were missed by more than one full interval.
    pub fn late_deadlines(&self) -> u64 {
        self.late
    }
}

/// Anything that can push bytes toward the server.
pub trait Transmitter {
    /// Returns the number of bytes accepted.
    fn transmit(&mut self, buf: &[u8]) -> Result<usize, String>;
}

pub struct TcpTransmitter(pub TcpStream);

impl Transmitter for TcpTransmitter {
    fn transmit(&mut self, buf: &[u8]) -> Result<usize, String> {
        let mut written = 0;
        while written < buf.len() {
            match self.0.write(&buf[written..]) {
                Ok(0) => break,
                Ok(n) => written += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) if written == 0 => return Err(e.to_string()),
                Err(_) => break,
            }
        }
        Ok(written)
    }
}

pub struct UdpTransmitter(pub UdpSocket);

impl Transmitter for UdpTransmitter {
    fn transmit(&mut self, buf: &[u8]) -> Result<usize, String> {
        self.0.send(buf).map_err(|e| e.to_string())
    }
}

/// Sends through the trusted-side socket facade.
pub struct TeeTransmitter<'a> {
    pub env: &'a mut TrustedEnv,
    pub socket: &'a mut TeeSocket,
}

impl Transmitter for TeeTransmitter<'_> {
    fn transmit(&mut self, buf: &[u8]) -> Result<usize, String> {
        self.env.socket_send(self.socket, buf).map_err(|e| match e {
            TeeError::Socket { errno } => io::Error::from_raw_os_error(errno).to_string(),
            other => other.to_string(),
        })
    }
}

struct Recorder {
    start: Instant,
    metrics: TransferMetrics,
    digest: crc32fast::Hasher,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            start: Instant::now(),
            metrics: TransferMetrics {
                batch_factor: 1,
                ..Default::default()
            },
            digest: crc32fast::Hasher::new(),
        }
    }

    /// Returns false once the transport has failed.
    fn send(&mut self, tx: &mut impl Transmitter, buf: &[u8]) -> bool {
        let t0 = Instant::now();
        let result = tx.transmit(buf);
        self.metrics.time_in_transmit += t0.elapsed().as_secs_f64();
        self.metrics.transmit_calls += 1;
        match result {
            Ok(0) if !buf.is_empty() => {
                self.metrics.error = Some("transport accepted no bytes".into());
                false
            }
            Ok(n) => {
                self.metrics.bytes_transferred += n as u64;
                self.digest.update(&buf[..n]);
                true
            }
            Err(e) => {
                self.metrics.error = Some(e);
                false
            }
        }
    }

    fn finish(mut self) -> TransferMetrics {
        self.metrics.total_runtime = self.start.elapsed().as_secs_f64();
        self.metrics.digest = self.digest.finalize();
        self.metrics
    }
}

/// Runs the send loop until `stop` holds.
///
/// `FixedBytes` trims the final send to the remaining budget. `ConstantRate`
/// sends at deadlines strictly inside `duration` and the window closes at the
/// end of the last pacing interval, so the window always spans whole intervals.
pub fn measure(tx: &mut impl Transmitter, stop: &StopCondition, chunk: &[u8]) -> TransferMetrics {
    let mut rec = Recorder::new();
    match *stop {
        StopCondition::FixedBytes { total_bytes } => {
            while rec.metrics.bytes_transferred < total_bytes {
                let remaining = total_bytes - rec.metrics.bytes_transferred;
                let n = chunk
                    .len()
                    .min(usize::try_from(remaining).unwrap_or(usize::MAX));
                if !rec.send(tx, &chunk[..n]) {
                    break;
                }
            }
        }
        StopCondition::FixedDuration { duration } => {
            let end = rec.start + Duration::from_secs_f64(duration);
            while Instant::now() < end {
                if !rec.send(tx, chunk) {
                    break;
                }
            }
        }
        StopCondition::ConstantRate { bitrate, duration } => {
            let mut pacer = Pacer::new(rec.start, bitrate, chunk.len());
            rec.metrics.batch_factor = pacer.batch();
            'run: while pacer.next_offset() < duration {
                pacer.wait_next();
                for _ in 0..pacer.batch() {
                    if !rec.send(tx, chunk) {
                        break 'run;
                    }
                }
            }
            if rec.metrics.error.is_none() {
                wait_until(pacer.next_deadline());
            }
            rec.metrics.late_deadlines = pacer.late_deadlines();
            rec.metrics.underrun = pacer.late_deadlines() > 0;
        }
    }
    rec.finish()
}

fn failed(error: String) -> TransferMetrics {
    TransferMetrics {
        batch_factor: 1,
        error: Some(error),
        ..Default::default()
    }
}

fn resolve(host: &str, port: u16) -> io::Result<std::net::SocketAddr> {
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {host}")))
}

/// Runs the measurement natively against `cfg.host:cfg.port`.
pub fn run_direct(cfg: &RunConfig) -> TransferMetrics {
    let chunk = fill_dummy_buffer(cfg.chunk_size, cfg.seed, &HeapBudget::unlimited())
        .expect("unlimited budget");
    let peer = match resolve(&cfg.host, cfg.port) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    match cfg.protocol {
        Protocol::Tcp => {
            let stream = match TcpStream::connect(peer) {
                Ok(s) => s,
                Err(e) => return failed(e.to_string()),
            };
            let sock = SockRef::from(&stream);
            let _ = sock.set_send_buffer_size(cfg.socket_buffer_size);
            let _ = sock.set_recv_buffer_size(cfg.socket_buffer_size);
            let mut tx = TcpTransmitter(stream);
            let metrics = measure(&mut tx, &cfg.stop, &chunk);
            let _ = tx.0.shutdown(std::net::Shutdown::Write);
            metrics
        }
        Protocol::Udp => {
            let bind = if peer.is_ipv4() {
                "0.0.0.0:0"
            } else {
                "[::]:0"
            };
            let socket = match UdpSocket::bind(bind).and_then(|s| s.connect(peer).map(|_| s)) {
                Ok(s) => s,
                Err(e) => return failed(e.to_string()),
            };
            let sock = SockRef::from(&socket);
            let _ = sock.set_send_buffer_size(cfg.socket_buffer_size);
            let _ = sock.set_recv_buffer_size(cfg.socket_buffer_size);
            measure(&mut UdpTransmitter(socket), &cfg.stop, &chunk)
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("boundary error: {0}")]
    Boundary(#[from] TeeError),
    #[error("malformed metrics from trusted app: {0}")]
    Metrics(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRun {
    pub metrics: TransferMetrics,
    /// Present for boundary runs.
    pub boundary: Option<BoundaryStats>,
    /// Unix seconds at run start and end, for aligning power traces.
    pub started_unix: f64,
    pub finished_unix: f64,
}

/// Runs the traffic client behind the emulated boundary: allocate the
/// argument and metrics regions, open an `iperftz` session with the
/// arguments, invoke the measurement, collect metrics, tear everything down.
pub fn run_boundary(
    cfg: &RunConfig,
    relay: RelayMode,
) -> Result<(TransferMetrics, BoundaryStats), ClientError> {
    let ctx = Context::initialize(ContextConfig {
        switch_cost: Duration::from_secs_f64(cfg.switch_cost),
        relay,
        ..ContextConfig::default()
    })?;
    let args = ctx.allocate_shared_region(apps::ARGS_REGION_SIZE, cfg.shared_mode, 0)?;
    let out = ctx.allocate_shared_region(apps::METRICS_REGION_SIZE, cfg.shared_mode, 0)?;
    args.write(0, &apps::encode_frame(cfg))?;

    let mut session = ctx.open_session(IPERF_APP, &mut [Param::memref(&args)])?;
    let invoked = session.invoke_command(apps::CMD_RUN_MEASUREMENT, &mut [Param::memref(&out)]);
    let closed = session.close();
    let frame = out.read_vec(0, out.size());
    ctx.release_shared_region(&args)?;
    ctx.release_shared_region(&out)?;
    let stats = ctx.stats();
    ctx.finalize()?;
    invoked?;
    closed?;

    let metrics: TransferMetrics =
        apps::decode_frame(&frame?).map_err(|e| ClientError::Metrics(e.to_string()))?;
    Ok((metrics, stats))
}

/// Validates `cfg` and runs it in its configured execution mode.
pub fn run_client(cfg: &RunConfig, relay: RelayMode) -> Result<ClientRun, ClientError> {
    let cfg = validate_config(cfg)?;
    let started_unix = crate::timing::unix_now();
    let (metrics, boundary) = match cfg.execution {
        Execution::Direct => (run_direct(&cfg), None),
        Execution::Boundary => {
            let (m, s) = run_boundary(&cfg, relay)?;
            (m, Some(s))
        }
    };
    Ok(ClientRun {
        metrics,
        boundary,
        started_unix,
        finished_unix: crate::timing::unix_now(),
    })
}
