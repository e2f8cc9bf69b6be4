// SPDX-License-Identifier: Apache-2.0

//! Fixed-rate key-value workload driver producing throughput/latency series.
//!
//! Each rate point issues its operations at a fixed rate against a 512 KiB
//! region of seeded random bytes. An operation addresses one 1 KiB chunk at
//! a random aligned offset, and the offset is the key.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{CMD_KV_DEL, CMD_KV_GET, CMD_KV_PUT, KV_APP};
use crate::boundary::{Context, ContextConfig, Param, Session, SharedRegion, TeeError};
use crate::client::{fill_dummy, Pacer};
use crate::config::{Execution, ShareMode};
use crate::kvstore::{KvError, KvStore};
use crate::memory::HeapBudget;
use crate::units::{KIB, TA_MEMORY_LIMIT};

pub const REGION_SIZE: usize = 512 * KIB;
pub const CHUNK: usize = KIB;
pub const CHUNKS: usize = REGION_SIZE / CHUNK;
pub const DEFAULT_OPS: usize = 256;
/// Rate points are `2^0 ..= 2^MAX_RATE_EXP` ops/s.
pub const MAX_RATE_EXP: u32 = 15;
/// Smallest op count a time-boxed rate point is cut down to.
pub const MIN_POINT_OPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    Put,
    Get,
    Del,
    Mix20,
    Mix50,
}

impl Workload {
    pub const ALL: [Workload; 5] = [
        Workload::Put,
        Workload::Get,
        Workload::Del,
        Workload::Mix20,
        Workload::Mix50,
    ];

    /// Fraction of PUT operations in a mixed workload.
    pub fn put_share(self) -> Option<f64> {
        match self {
            Workload::Mix20 => Some(0.2),
            Workload::Mix50 => Some(0.5),
            _ => None,
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workload::Put => "put",
            Workload::Get => "get",
            Workload::Del => "del",
            Workload::Mix20 => "mix20",
            Workload::Mix50 => "mix50",
        })
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Workload::ALL
            .into_iter()
            .find(|w| w.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown workload '{s}' (put, get, del, mix20, mix50)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Put,
    Get,
    Del,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvOp {
    pub kind: OpKind,
    /// Byte offset into the region; also the key.
    pub offset: usize,
}

impl KvOp {
    pub fn key(&self) -> u64 {
        self.offset as u64
    }
}

fn random_offset(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(0..CHUNKS) * CHUNK
}

/// The operation sequence for `workload`. Mixed workloads contain exactly
/// `round(share * n)` PUTs at shuffled positions; their GETs reuse keys of
/// earlier PUTs when there are any.
pub fn plan_ops(workload: Workload, n: usize, seed: u64) -> Vec<KvOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let single = |kind, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| KvOp {
                kind,
                offset: random_offset(rng),
            })
            .collect()
    };
    match workload {
        Workload::Put => single(OpKind::Put, &mut rng),
        Workload::Get => single(OpKind::Get, &mut rng),
        Workload::Del => single(OpKind::Del, &mut rng),
        Workload::Mix20 | Workload::Mix50 => {
            let puts = (workload.put_share().unwrap() * n as f64).round() as usize;
            let mut kinds: Vec<OpKind> = (0..n)
                .map(|i| if i < puts { OpKind::Put } else { OpKind::Get })
                .collect();
            kinds.shuffle(&mut rng);
            let mut written = Vec::new();
            kinds
                .into_iter()
                .map(|kind| {
                    let offset = match kind {
                        OpKind::Get if !written.is_empty() => {
                            written[rng.random_range(0..written.len())]
                        }
                        _ => random_offset(&mut rng),
                    };
                    if kind == OpKind::Put {
                        written.push(offset);
                    }
                    KvOp { kind, offset }
                })
                .collect()
        }
    }
}

/// The target rates, `1, 2, 4, ..., 32768` ops/s.
pub fn default_rates() -> Vec<f64> {
    (0..=MAX_RATE_EXP).map(|e| f64::from(1u32 << e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvBenchConfig {
    pub workload: Workload,
    pub execution: Execution,
    pub shared_mode: ShareMode,
    pub rates: Vec<f64>,
    /// Operations per rate point.
    pub ops: usize,
    /// When set, a rate point issues at most `rate * point_budget` operations
    /// (but never fewer than [`MIN_POINT_OPS`]).
    pub point_budget: Option<f64>,
    /// Store every chunk before GET and DEL workloads, untimed.
    pub preload: bool,
    /// Seconds injected per boundary crossing.
    pub switch_cost: f64,
    pub seed: u64,
}

impl Default for KvBenchConfig {
    fn default() -> Self {
        KvBenchConfig {
            workload: Workload::Put,
            execution: Execution::Direct,
            shared_mode: ShareMode::Whole,
            rates: default_rates(),
            ops: DEFAULT_OPS,
            point_budget: None,
            preload: true,
            switch_cost: 0.0,
            seed: 0,
        }
    }
}

impl KvBenchConfig {
    pub fn ops_at(&self, rate: f64) -> usize {
        match self.point_budget {
            Some(budget) => {
                let boxed = (rate * budget).floor() as usize;
                self.ops.min(boxed.max(MIN_POINT_OPS))
            }
            None => self.ops,
        }
    }
}

/// Seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p / 100.0 * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        LatencyStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// Ops/s.
    pub target_rate: f64,
    pub achieved_rate: f64,
    pub ops: usize,
    /// GET and DEL operations that found their key.
    pub found: usize,
    pub not_found: usize,
    pub errors: usize,
    pub late_deadlines: u64,
    pub underrun: bool,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputLatencySeries {
    pub workload: Workload,
    pub execution: Execution,
    pub shared_mode: ShareMode,
    pub seed: u64,
    pub points: Vec<RatePoint>,
}

#[derive(Debug, Error)]
pub enum KvBenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Boundary(#[from] TeeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Found,
    NotFound,
}

/// Where the store lives.
pub trait KvTarget {
    /// The 512 KiB source region.
    fn region_write(&mut self, data: &[u8]) -> Result<(), KvBenchError>;
    fn apply(&mut self, op: KvOp) -> Result<Outcome, KvBenchError>;
}

/// In-process store reading from and writing to a local buffer.
pub struct DirectTarget {
    region: Vec<u8>,
    store: KvStore,
}

impl Default for DirectTarget {
    fn default() -> Self {
        DirectTarget {
            region: vec![0; REGION_SIZE],
            store: KvStore::with_budget(HeapBudget::new(TA_MEMORY_LIMIT)),
        }
    }
}

impl DirectTarget {
    pub fn store(&self) -> &KvStore {
        &self.store
    }
}

fn kv_error(e: KvError) -> KvBenchError {
    match e {
        KvError::OutOfMemory(oom) => TeeError::from(oom).into(),
        KvError::EmptyValue => KvBenchError::Config(e.to_string()),
    }
}

impl KvTarget for DirectTarget {
    fn region_write(&mut self, data: &[u8]) -> Result<(), KvBenchError> {
        self.region.copy_from_slice(data);
        Ok(())
    }

    fn apply(&mut self, op: KvOp) -> Result<Outcome, KvBenchError> {
        let window = op.offset..op.offset + CHUNK;
        let found = match op.kind {
            OpKind::Put => {
                self.store
                    .put(op.key(), &self.region[window])
                    .map_err(kv_error)?;
                true
            }
            OpKind::Get => match self.store.lookup(op.key()) {
                Some(v) => {
                    let n = v.len().min(CHUNK);
                    self.region[op.offset..op.offset + n].copy_from_slice(&v[..n]);
                    true
                }
                None => false,
            },
            OpKind::Del => self.store.del(op.key()),
        };
        Ok(if found {
            Outcome::Found
        } else {
            Outcome::NotFound
        })
    }
}

/// Store hosted by the `kvstore` trusted app.
pub struct BoundaryTarget {
    // Field order matters: the session must close before the context drops.
    session: Session,
    region: SharedRegion,
    ctx: Context,
}

impl BoundaryTarget {
    pub fn new(mode: ShareMode, switch_cost: f64) -> Result<BoundaryTarget, KvBenchError> {
        let ctx = Context::initialize(ContextConfig {
            switch_cost: Duration::from_secs_f64(switch_cost),
            ..ContextConfig::default()
        })?;
        let region = ctx.allocate_shared_region(REGION_SIZE, mode, 0)?;
        let session = ctx.open_session(KV_APP, &mut [])?;
        Ok(BoundaryTarget {
            session,
            region,
            ctx,
        })
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    /// Closes the session and tears the context down.
    pub fn shutdown(mut self) -> Result<(), KvBenchError> {
        self.session.close()?;
        self.ctx.release_shared_region(&self.region)?;
        self.ctx.finalize()?;
        Ok(())
    }
}

impl KvTarget for BoundaryTarget {
    fn region_write(&mut self, data: &[u8]) -> Result<(), KvBenchError> {
        Ok(self.region.write(0, data)?)
    }

    fn apply(&mut self, op: KvOp) -> Result<Outcome, KvBenchError> {
        let command = match op.kind {
            OpKind::Put => CMD_KV_PUT,
            OpKind::Get => CMD_KV_GET,
            OpKind::Del => CMD_KV_DEL,
        };
        // Whole regions are passed in full with the chunk's offset; the
        // other modes share only the chunk.
        let (mem, at) = match self.region.mode() {
            ShareMode::Whole => (Param::memref(&self.region), op.offset),
            ShareMode::Partial | ShareMode::Temporary => {
                (Param::memref_window(&self.region, op.offset, CHUNK), 0)
            }
        };
        let mut params = [
            Param::value(op.key(), 0),
            Param::value(at as u64, CHUNK as u64),
            mem,
        ];
        self.session.invoke_command(command, &mut params)?;
        Ok(match params[0] {
            Param::Value { b: 1, .. } => Outcome::Found,
            _ => Outcome::NotFound,
        })
    }
}

/// Fills the region from the seed and, if configured, preloads the store.
pub fn prepare(target: &mut dyn KvTarget, cfg: &KvBenchConfig) -> Result<(), KvBenchError> {
    let mut region = vec![0; REGION_SIZE];
    fill_dummy(&mut region, cfg.seed);
    target.region_write(&region)?;
    if cfg.preload && matches!(cfg.workload, Workload::Get | Workload::Del) {
        for i in 0..CHUNKS {
            target.apply(KvOp {
                kind: OpKind::Put,
                offset: i * CHUNK,
            })?;
        }
    }
    Ok(())
}

/// Runs `ops` paced at `rate`. Operation errors are counted, not fatal.
pub fn run_point(target: &mut dyn KvTarget, ops: &[KvOp], rate: f64) -> RatePoint {
    let mut latencies = Vec::with_capacity(ops.len());
    let (mut found, mut not_found, mut errors) = (0, 0, 0);
    let start = Instant::now();
    let mut pacer = Pacer::every(start, 1.0 / rate);
    let batch = pacer.batch() as usize;
    for group in ops.chunks(batch) {
        pacer.wait_next();
        for op in group {
            let t0 = Instant::now();
            let outcome = target.apply(*op);
            latencies.push(t0.elapsed().as_secs_f64());
            match outcome {
                Ok(Outcome::Found) => found += 1,
                Ok(Outcome::NotFound) => not_found += 1,
                Err(_) => errors += 1,
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let window = elapsed.max(ops.len() as f64 / rate);
    let late = pacer.late_deadlines();
    RatePoint {
        target_rate: rate,
        achieved_rate: if window > 0.0 {
            ops.len() as f64 / window
        } else {
            0.0
        },
        ops: ops.len(),
        found,
        not_found,
        errors,
        late_deadlines: late,
        underrun: late > 0,
        latency: LatencyStats::from_samples(&latencies),
    }
}

fn validate(cfg: &KvBenchConfig) -> Result<(), KvBenchError> {
    if cfg.ops == 0 {
        return Err(KvBenchError::Config("ops must be at least 1".into()));
    }
    if cfg.rates.is_empty() || cfg.rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(KvBenchError::Config("rates must be positive".into()));
    }
    if !cfg.switch_cost.is_finite() || cfg.switch_cost < 0.0 {
        return Err(KvBenchError::Config(
            "switch cost must be non-negative".into(),
        ));
    }
    if cfg.point_budget.is_some_and(|b| !b.is_finite() || b <= 0.0) {
        return Err(KvBenchError::Config("point budget must be positive".into()));
    }
    Ok(())
}

/// Runs every rate point of `cfg`. Each point starts from a fresh store so
/// points do not see each other's writes.
pub fn run_kv_bench(cfg: &KvBenchConfig) -> Result<ThroughputLatencySeries, KvBenchError> {
    validate(cfg)?;
    let mut points = Vec::with_capacity(cfg.rates.len());
    for (i, &rate) in cfg.rates.iter().enumerate() {
        let ops = plan_ops(
            cfg.workload,
            cfg.ops_at(rate),
            cfg.seed.wrapping_add(i as u64),
        );
        let point = match cfg.execution {
            Execution::Direct => {
                let mut target = DirectTarget::default();
                prepare(&mut target, cfg)?;
                run_point(&mut target, &ops, rate)
            }
            Execution::Boundary => {
                let mut target = BoundaryTarget::new(cfg.shared_mode, cfg.switch_cost)?;
                prepare(&mut target, cfg)?;
                let point = run_point(&mut target, &ops, rate);
                target.shutdown()?;
                point
            }
        };
        points.push(point);
    }
    Ok(ThroughputLatencySeries {
        workload: cfg.workload,
        execution: cfg.execution,
        shared_mode: cfg.shared_mode,
        seed: cfg.seed,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_aligned_and_reproducible() {
        for w in Workload::ALL {
            let a = plan_ops(w, DEFAULT_OPS, 11);
            assert_eq!(a, plan_ops(w, DEFAULT_OPS, 11));
            assert!(a
                .iter()
                .all(|op| op.offset % CHUNK == 0 && op.offset <= REGION_SIZE - CHUNK));
        }
        assert_ne!(
            plan_ops(Workload::Put, 64, 1),
            plan_ops(Workload::Put, 64, 2)
        );
    }

    #[test]
    fn mix_counts_are_exact() {
        let count = |w, kind| {
            plan_ops(w, DEFAULT_OPS, 5)
                .iter()
                .filter(|op| op.kind == kind)
                .count()
        };
        assert_eq!(count(Workload::Mix50, OpKind::Put), 128);
        assert_eq!(count(Workload::Mix50, OpKind::Get), 128);
        assert_eq!(count(Workload::Mix20, OpKind::Put), 51);
        assert_eq!(count(Workload::Mix20, OpKind::Get), 205);
    }

    #[test]
    fn mix_gets_reuse_earlier_puts() {
        let ops = plan_ops(Workload::Mix20, DEFAULT_OPS, 9);
        let mut written = std::collections::HashSet::new();
        let mut seen_put = false;
        for op in ops {
            match op.kind {
                OpKind::Put => {
                    written.insert(op.offset);
                    seen_put = true;
                }
                _ if seen_put => assert!(written.contains(&op.offset)),
                _ => {}
            }
        }
    }

    #[test]
    fn percentiles_nearest_rank() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencyStats::from_samples(&samples);
        assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
        assert_eq!(s.mean, 50.5);
        let one = LatencyStats::from_samples(&[3.0]);
        assert_eq!((one.p50, one.p99), (3.0, 3.0));
    }

    #[test]
    fn get_on_empty_store() {
        let cfg = KvBenchConfig {
            workload: Workload::Get,
            rates: vec![32768.0],
            preload: false,
            ..KvBenchConfig::default()
        };
        let series = run_kv_bench(&cfg).unwrap();
        let p = &series.points[0];
        assert_eq!((p.ops, p.not_found, p.found, p.errors), (256, 256, 0, 0));
    }

    #[test]
    fn direct_and_boundary_agree() {
        for mode in [ShareMode::Whole, ShareMode::Partial, ShareMode::Temporary] {
            let ops = plan_ops(Workload::Mix50, 512, 3);
            let mut direct = DirectTarget::default();
            let mut tee = BoundaryTarget::new(mode, 0.0).unwrap();
            let cfg = KvBenchConfig {
                seed: 3,
                ..KvBenchConfig::default()
            };
            prepare(&mut direct, &cfg).unwrap();
            prepare(&mut tee, &cfg).unwrap();
            for op in ops {
                assert_eq!(
                    direct.apply(op).unwrap(),
                    tee.apply(op).unwrap(),
                    "{mode} {op:?}"
                );
            }
            let stats = tee.context().stats();
            assert_eq!(stats.crossings, 2 * (1 + 512));
            tee.shutdown().unwrap();
        }
    }

    #[test]
    fn time_boxed_op_counts() {
        let cfg = KvBenchConfig {
            point_budget: Some(1.0),
            ..KvBenchConfig::default()
        };
        assert_eq!(cfg.ops_at(1.0), MIN_POINT_OPS);
        assert_eq!(cfg.ops_at(64.0), 64);
        assert_eq!(cfg.ops_at(1024.0), DEFAULT_OPS);
        assert_eq!(KvBenchConfig::default().ops_at(1.0), DEFAULT_OPS);
    }

    #[test]
    fn paced_point_respects_rate() {
        let mut target = DirectTarget::default();
        let ops = plan_ops(Workload::Put, 32, 0);
        let p = run_point(&mut target, &ops, 256.0);
        assert!(p.achieved_rate <= 256.0 * 1.05, "{}", p.achieved_rate);
        assert!(p.achieved_rate >= 256.0 * 0.9, "{}", p.achieved_rate);
        assert!(p.latency.p50 <= p.latency.p95 && p.latency.p95 <= p.latency.p99);
    }
}
