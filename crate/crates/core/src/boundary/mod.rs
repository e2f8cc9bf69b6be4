// SPDX-License-Identifier: Apache-2.0

//! Emulated TEE boundary.
//!
//! The client side uses a GlobalPlatform-style API: initialize a [`Context`],
//! allocate [`SharedRegion`]s, open a [`Session`] to a named [`TrustedApp`],
//! invoke commands, close, release, finalize. Trusted code runs on the
//! caller's thread while the caller blocks, and reaches the network only
//! through [`TrustedEnv`], whose socket calls are relayed to a supplicant
//! over a control pipe plus a shared segment.
//!
//! Every transition between the two sides is a counted crossing with an
//! optional injected delay. Open, invoke and close each cost two crossings,
//! and so does every relayed socket call.

mod error;
pub mod region;
pub mod rpc;
pub mod segment;
mod socket;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use error::*;
pub use region::{Lifetime, Param, ShareMode, SharedRegion, TaMemRef, TaParam};
pub use rpc::{Relay, RelayMode, RpcDescriptor};
pub use socket::{Ioctl, SocketState, TeeSocket, TrustedEnv};

use crate::memory::HeapBudget;
use crate::units::{MIB, TA_MEMORY_LIMIT};
use region::{lock, RegionState};

/// Code that runs on the trusted side of the boundary.
pub trait TrustedApp: Send {
    fn open_session(
        &mut self,
        _env: &mut TrustedEnv,
        _params: &mut [TaParam],
    ) -> Result<(), TeeError> {
        Ok(())
    }

    fn invoke_command(
        &mut self,
        env: &mut TrustedEnv,
        command: u32,
        params: &mut [TaParam],
    ) -> Result<(), TeeError>;

    fn close_session(&mut self, _env: &mut TrustedEnv) {}
}

pub type AppFactory = Arc<dyn Fn() -> Box<dyn TrustedApp> + Send + Sync>;

#[derive(Debug, Clone)]
pub struct ContextConfig {
    /// Delay injected at every crossing.
    pub switch_cost: Duration,
    pub relay: RelayMode,
    /// Upper bound on the total size of live shared regions.
    pub shared_memory_cap: usize,
    /// Heap available to each session's trusted code.
    pub ta_heap_limit: usize,
    /// Size of the segment socket payloads travel through.
    pub relay_segment_size: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            switch_cost: Duration::ZERO,
            relay: RelayMode::Thread,
            shared_memory_cap: 64 * MIB,
            ta_heap_limit: TA_MEMORY_LIMIT,
            relay_segment_size: TA_MEMORY_LIMIT,
        }
    }
}

/// Crossing and relay counters for one context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    /// Secure-to-normal plus normal-to-secure transitions.
    pub crossings: u64,
    /// Seconds of delay injected, `crossings * switch_cost`.
    pub injected_cost_total: f64,
    /// Socket calls relayed to the supplicant.
    pub rpc_count: u64,
    /// Bytes copied across the boundary: relayed socket payloads plus
    /// temporary memref staging in both directions.
    pub bytes_copied: u64,
}

#[derive(Debug, Default)]
struct StatsCell {
    crossings: AtomicU64,
    injected_nanos: AtomicU64,
    rpc_count: AtomicU64,
    bytes_copied: AtomicU64,
}

impl StatsCell {
    fn rpc(&self) {
        self.rpc_count.fetch_add(1, Ordering::Relaxed);
    }

    fn copied(&self, n: u64) {
        self.bytes_copied.fetch_add(n, Ordering::Relaxed);
    }

    fn snapshot(&self) -> BoundaryStats {
        BoundaryStats {
            crossings: self.crossings.load(Ordering::Acquire),
            injected_cost_total: self.injected_nanos.load(Ordering::Acquire) as f64 * 1e-9,
            rpc_count: self.rpc_count.load(Ordering::Acquire),
            bytes_copied: self.bytes_copied.load(Ordering::Acquire),
        }
    }
}

static NEXT_CONTEXT: AtomicU64 = AtomicU64::new(1);

pub(crate) struct ContextInner {
    id: u64,
    config: ContextConfig,
    stats: StatsCell,
    registry: RwLock<HashMap<String, AppFactory>>,
    regions: Mutex<HashMap<u32, Arc<RegionState>>>,
    shared_bytes: AtomicUsize,
    live_sessions: AtomicUsize,
    finalized: AtomicBool,
    relay: Mutex<Option<Relay>>,
    next_id: AtomicU32,
}

impl ContextInner {
    fn cross(&self) {
        crate::timing::busy_delay(self.config.switch_cost);
        self.stats.crossings.fetch_add(1, Ordering::AcqRel);
        self.stats
            .injected_nanos
            .fetch_add(self.config.switch_cost.as_nanos() as u64, Ordering::AcqRel);
    }

    fn live(&self) -> Result<(), TeeError> {
        if self.finalized.load(Ordering::Acquire) {
            Err(TeeError::BadState("context finalized"))
        } else {
            Ok(())
        }
    }

    /// Locks the relay, starting the supplicant on first use.
    fn relay(&self) -> Result<MutexGuard<'_, Option<Relay>>, TeeError> {
        let mut guard = self.relay.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            let relay = Relay::spawn(&self.config.relay, self.config.relay_segment_size)
                .map_err(|e| TeeError::Communication(format!("cannot start supplicant: {e}")))?;
            *guard = Some(relay);
        }
        Ok(guard)
    }
}

/// A client connection to the emulated TEE.
pub struct Context {
    inner: Arc<ContextInner>,
}

impl Context {
    /// Creates an empty context with the built-in trusted apps registered.
    pub fn initialize(config: ContextConfig) -> Result<Context, TeeError> {
        let ctx = Context {
            inner: Arc::new(ContextInner {
                id: NEXT_CONTEXT.fetch_add(1, Ordering::Relaxed),
                config,
                stats: StatsCell::default(),
                registry: RwLock::new(HashMap::new()),
                regions: Mutex::new(HashMap::new()),
                shared_bytes: AtomicUsize::new(0),
                live_sessions: AtomicUsize::new(0),
                finalized: AtomicBool::new(false),
                relay: Mutex::new(None),
                next_id: AtomicU32::new(1),
            }),
        };
        crate::apps::register_builtin(&ctx);
        Ok(ctx)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn config(&self) -> &ContextConfig {
        &self.inner.config
    }

    pub fn stats(&self) -> BoundaryStats {
        self.inner.stats.snapshot()
    }

    pub fn session_count(&self) -> usize {
        self.inner.live_sessions.load(Ordering::Acquire)
    }

    pub fn region_count(&self) -> usize {
        self.inner
            .regions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .len()
    }

    /// Registers (or replaces) a trusted app under `name`.
    pub fn register_app(
        &self,
        name: &str,
        factory: impl Fn() -> Box<dyn TrustedApp> + Send + Sync + 'static,
    ) {
        self.inner
            .registry
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(name.to_string(), Arc::new(factory));
    }

    /// Allocates a zeroed region. `offset` starts the default window of
    /// `Partial` and `Temporary` regions and must be 0 for `Whole`.
    pub fn allocate_shared_region(
        &self,
        size: usize,
        mode: ShareMode,
        offset: usize,
    ) -> Result<SharedRegion, TeeError> {
        self.inner.live()?;
        if size == 0 {
            return Err(TeeError::BadParameters(
                "region size must be at least 1".into(),
            ));
        }
        match mode {
            ShareMode::Whole if offset != 0 => {
                return Err(TeeError::BadParameters(
                    "whole regions take no offset".into(),
                ))
            }
            ShareMode::Partial | ShareMode::Temporary if offset >= size => {
                return Err(TeeError::BadParameters(format!(
                    "offset {offset} leaves an empty window in a {size}-byte region"
                )))
            }
            _ => {}
        }
        let cap = self.inner.config.shared_memory_cap;
        self.inner
            .shared_bytes
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |used| {
                used.checked_add(size).filter(|&n| n <= cap)
            })
            .map_err(|used| TeeError::OutOfMemory {
                requested: size,
                available: cap.saturating_sub(used),
            })?;
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let state = Arc::new(RegionState {
            id,
            context_id: self.inner.id,
            size,
            mode,
            offset,
            data: Arc::new(Mutex::new(vec![0; size])),
            released: AtomicBool::new(false),
            session_refs: AtomicUsize::new(0),
        });
        self.inner
            .regions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, state.clone());
        Ok(SharedRegion { state })
    }

    /// Releases a region. Fails while an open session still has it registered.
    pub fn release_shared_region(&self, region: &SharedRegion) -> Result<(), TeeError> {
        if region.state.context_id != self.inner.id {
            return Err(TeeError::BadParameters(
                "region belongs to another context".into(),
            ));
        }
        if region.state.session_refs.load(Ordering::Acquire) > 0 {
            return Err(TeeError::BadState(
                "region is registered with an open session",
            ));
        }
        if region.state.released.swap(true, Ordering::AcqRel) {
            return Err(TeeError::BadState("shared region already released"));
        }
        self.inner
            .regions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .remove(&region.state.id);
        self.inner
            .shared_bytes
            .fetch_sub(region.state.size, Ordering::AcqRel);
        Ok(())
    }

    /// Opens a session to the trusted app `name`; `params` are delivered to
    /// the app's open entry point.
    pub fn open_session(&self, name: &str, params: &mut [Param]) -> Result<Session, TeeError> {
        self.inner.live()?;
        let factory = self
            .inner
            .registry
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(name)
            .cloned()
            .ok_or_else(|| TeeError::UnknownApp(name.to_string()))?;
        let mut session = Session {
            id: self.inner.next_id.fetch_add(1, Ordering::Relaxed),
            ta_name: name.to_string(),
            env: TrustedEnv {
                ctx: self.inner.clone(),
                heap: HeapBudget::new(self.inner.config.ta_heap_limit),
            },
            app: factory(),
            grants: HashMap::new(),
            open: false,
        };
        session.call(params, |app, env, ta| app.open_session(env, ta))?;
        session.open = true;
        self.inner.live_sessions.fetch_add(1, Ordering::AcqRel);
        Ok(session)
    }

    /// Finalizes the context. Every session must be closed and every region
    /// released first.
    pub fn finalize(&self) -> Result<(), TeeError> {
        self.inner.live()?;
        let sessions = self.session_count();
        let regions = self.region_count();
        if sessions > 0 || regions > 0 {
            return Err(TeeError::ContextBusy { sessions, regions });
        }
        self.inner.finalized.store(true, Ordering::Release);
        self.inner
            .relay
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .take();
        Ok(())
    }
}

struct Grant {
    flag: Arc<AtomicBool>,
    region: Arc<RegionState>,
}

/// An open session to one trusted app. One invocation at a time.
pub struct Session {
    id: u32,
    ta_name: String,
    env: TrustedEnv,
    app: Box<dyn TrustedApp>,
    /// Session-bound regions registered so far.
    grants: HashMap<u32, Grant>,
    open: bool,
}

/// Marshalled form of a temporary memref, copied back on return.
struct Staged {
    backing: region::Backing,
    region: Arc<RegionState>,
    offset: usize,
    flag: Arc<AtomicBool>,
}

impl Session {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn app_name(&self) -> &str {
        &self.ta_name
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn stats(&self) -> BoundaryStats {
        self.env.ctx.stats.snapshot()
    }

    fn marshal(&mut self, params: &[Param]) -> Result<(Vec<TaParam>, Vec<Staged>), TeeError> {
        let mut out = Vec::with_capacity(params.len());
        let mut staged = Vec::new();
        for p in params {
            out.push(match p {
                Param::None => TaParam::None,
                Param::Value { a, b } => TaParam::Value { a: *a, b: *b },
                Param::MemRef {
                    region,
                    offset,
                    len,
                } => {
                    let state = &region.state;
                    if state.context_id != self.env.ctx.id {
                        return Err(TeeError::BadParameters(
                            "region belongs to another context".into(),
                        ));
                    }
                    if state.released.load(Ordering::Acquire) {
                        return Err(TeeError::BadState("shared region already released"));
                    }
                    let in_bounds = offset
                        .checked_add(*len)
                        .is_some_and(|end| end <= state.size);
                    if *len == 0 || !in_bounds {
                        return Err(TeeError::BadParameters(format!(
                            "window {offset}+{len} outside region of {} bytes",
                            state.size
                        )));
                    }
                    if state.mode == ShareMode::Whole && (*offset != 0 || *len != state.size) {
                        return Err(TeeError::BadParameters(
                            "whole regions are shared in full".into(),
                        ));
                    }
                    match state.mode {
                        ShareMode::Whole | ShareMode::Partial => {
                            let grant = self.grants.entry(state.id).or_insert_with(|| {
                                state.session_refs.fetch_add(1, Ordering::AcqRel);
                                Grant {
                                    flag: Arc::new(AtomicBool::new(true)),
                                    region: state.clone(),
                                }
                            });
                            TaParam::MemRef(TaMemRef {
                                backing: state.data.clone(),
                                base: *offset,
                                len: *len,
                                grant: grant.flag.clone(),
                                region_id: state.id,
                            })
                        }
                        ShareMode::Temporary => {
                            let copy = lock(&state.data)[*offset..offset + len].to_vec();
                            self.env.ctx.stats.copied(*len as u64);
                            let backing = Arc::new(Mutex::new(copy));
                            let flag = Arc::new(AtomicBool::new(true));
                            staged.push(Staged {
                                backing: backing.clone(),
                                region: state.clone(),
                                offset: *offset,
                                flag: flag.clone(),
                            });
                            TaParam::MemRef(TaMemRef {
                                backing,
                                base: 0,
                                len: *len,
                                grant: flag,
                                region_id: state.id,
                            })
                        }
                    }
                }
            });
        }
        Ok((out, staged))
    }

    fn unmarshal(&self, params: &mut [Param], ta: &[TaParam], staged: Vec<Staged>) {
        for s in staged {
            s.flag.store(false, Ordering::Release);
            let data = lock(&s.backing);
            lock(&s.region.data)[s.offset..s.offset + data.len()].copy_from_slice(&data);
            self.env.ctx.stats.copied(data.len() as u64);
        }
        for (p, t) in params.iter_mut().zip(ta) {
            if let (Param::Value { a, b }, TaParam::Value { a: ta_a, b: ta_b }) = (p, t) {
                *a = *ta_a;
                *b = *ta_b;
            }
        }
    }

    /// Enters the trusted side, runs `f`, and returns.
    fn call(
        &mut self,
        params: &mut [Param],
        f: impl FnOnce(&mut dyn TrustedApp, &mut TrustedEnv, &mut [TaParam]) -> Result<(), TeeError>,
    ) -> Result<(), TeeError> {
        let (mut ta, staged) = self.marshal(params)?;
        self.env.ctx.cross();
        let result = f(self.app.as_mut(), &mut self.env, &mut ta);
        self.unmarshal(params, &ta, staged);
        self.env.ctx.cross();
        result
    }

    /// Runs `command` in the trusted app. Blocks until it returns.
    pub fn invoke_command(&mut self, command: u32, params: &mut [Param]) -> Result<(), TeeError> {
        if !self.open {
            return Err(TeeError::BadState("session is closed"));
        }
        self.call(params, |app, env, ta| app.invoke_command(env, command, ta))
    }

    /// Closes the session and revokes every session-bound region.
    pub fn close(&mut self) -> Result<(), TeeError> {
        if !self.open {
            return Err(TeeError::BadState("session already closed"));
        }
        self.call(&mut [], |app, env, _| {
            app.close_session(env);
            Ok(())
        })?;
        self.open = false;
        for (_, grant) in self.grants.drain() {
            grant.flag.store(false, Ordering::Release);
            grant.region.session_refs.fetch_sub(1, Ordering::AcqRel);
        }
        self.env.ctx.live_sessions.fetch_sub(1, Ordering::AcqRel);
        Ok(())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.open {
            let _ = self.close();
        }
    }
}
