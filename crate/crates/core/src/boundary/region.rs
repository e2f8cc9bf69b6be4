// SPDX-License-Identifier: Apache-2.0

//! Shared-memory regions and invocation parameters.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::TeeError;
pub use crate::config::ShareMode;

/// How long the trusted side may touch a region once it has been passed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lifetime {
    /// Registered with the session on first use, revoked when it closes.
    SessionBound,
    /// Shared for the duration of one open or invoke call.
    InvocationBound,
}

impl From<ShareMode> for Lifetime {
    fn from(mode: ShareMode) -> Self {
        match mode {
            ShareMode::Whole | ShareMode::Partial => Lifetime::SessionBound,
            ShareMode::Temporary => Lifetime::InvocationBound,
        }
    }
}

pub(crate) type Backing = Arc<Mutex<Vec<u8>>>;

pub(crate) fn lock(backing: &Backing) -> MutexGuard<'_, Vec<u8>> {
    backing.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug)]
pub(crate) struct RegionState {
    pub(crate) id: u32,
    pub(crate) context_id: u64,
    pub(crate) size: usize,
    pub(crate) mode: ShareMode,
    pub(crate) offset: usize,
    pub(crate) data: Backing,
    pub(crate) released: AtomicBool,
    /// Open sessions this region is registered with.
    pub(crate) session_refs: AtomicUsize,
}

/// Client-side handle to a shared-memory region. Cloning shares the region.
#[derive(Debug, Clone)]
pub struct SharedRegion {
    pub(crate) state: Arc<RegionState>,
}

impl SharedRegion {
    pub fn id(&self) -> u32 {
        self.state.id
    }

    pub fn size(&self) -> usize {
        self.state.size
    }

    pub fn mode(&self) -> ShareMode {
        self.state.mode
    }

    pub fn offset(&self) -> usize {
        self.state.offset
    }

    pub fn lifetime(&self) -> Lifetime {
        self.state.mode.into()
    }

    /// The window the trusted side sees when the region is passed without an
    /// explicit range: everything for `Whole`, `[offset, size)` otherwise.
    pub fn default_window(&self) -> Range<usize> {
        match self.state.mode {
            ShareMode::Whole => 0..self.state.size,
            ShareMode::Partial | ShareMode::Temporary => self.state.offset..self.state.size,
        }
    }

    fn live(&self) -> Result<(), TeeError> {
        if self.state.released.load(Ordering::Acquire) {
            Err(TeeError::BadState("shared region already released"))
        } else {
            Ok(())
        }
    }

    fn range(&self, at: usize, len: usize) -> Result<Range<usize>, TeeError> {
        match at.checked_add(len) {
            Some(end) if end <= self.state.size => Ok(at..end),
            _ => Err(TeeError::BadParameters(format!(
                "range {at}+{len} outside region of {} bytes",
                self.state.size
            ))),
        }
    }

    pub fn write(&self, at: usize, data: &[u8]) -> Result<(), TeeError> {
        self.live()?;
        let range = self.range(at, data.len())?;
        lock(&self.state.data)[range].copy_from_slice(data);
        Ok(())
    }

    pub fn read(&self, at: usize, buf: &mut [u8]) -> Result<(), TeeError> {
        self.live()?;
        let range = self.range(at, buf.len())?;
        buf.copy_from_slice(&lock(&self.state.data)[range]);
        Ok(())
    }

    pub fn read_vec(&self, at: usize, len: usize) -> Result<Vec<u8>, TeeError> {
        let mut out = vec![0; len];
        self.read(at, &mut out)?;
        Ok(out)
    }
}

/// A parameter passed from the client to the trusted side.
#[derive(Debug, Clone)]
pub enum Param {
    None,
    /// Two integers; the trusted side may overwrite them as output.
    Value {
        a: u64,
        b: u64,
    },
    MemRef {
        region: SharedRegion,
        offset: usize,
        len: usize,
    },
}

impl Param {
    /// Passes `region` with its default window.
    pub fn memref(region: &SharedRegion) -> Param {
        let w = region.default_window();
        Param::MemRef {
            region: region.clone(),
            offset: w.start,
            len: w.len(),
        }
    }

    /// Passes `[offset, offset + len)` of `region`. Not allowed for `Whole`
    /// regions unless the window covers the whole region.
    pub fn memref_window(region: &SharedRegion, offset: usize, len: usize) -> Param {
        Param::MemRef {
            region: region.clone(),
            offset,
            len,
        }
    }

    pub fn value(a: u64, b: u64) -> Param {
        Param::Value { a, b }
    }
}

/// Trusted-side view of a memory parameter.
///
/// Every access re-checks that the sharing grant is still live and that the
/// range falls inside the window; violations are faults, never truncation.
#[derive(Debug, Clone)]
pub struct TaMemRef {
    pub(crate) backing: Backing,
    pub(crate) base: usize,
    pub(crate) len: usize,
    pub(crate) grant: Arc<AtomicBool>,
    pub(crate) region_id: u32,
}

impl TaMemRef {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn region_id(&self) -> u32 {
        self.region_id
    }

    pub fn is_live(&self) -> bool {
        self.grant.load(Ordering::Acquire)
    }

    fn check(&self, at: usize, len: usize) -> Result<Range<usize>, TeeError> {
        if !self.is_live() {
            return Err(TeeError::Fault(format!(
                "region {} is no longer shared with the trusted side",
                self.region_id
            )));
        }
        match at.checked_add(len) {
            Some(end) if end <= self.len => Ok(self.base + at..self.base + end),
            _ => Err(TeeError::Fault(format!(
                "access {at}+{len} outside window of {} bytes",
                self.len
            ))),
        }
    }

    pub fn read(&self, at: usize, buf: &mut [u8]) -> Result<(), TeeError> {
        let range = self.check(at, buf.len())?;
        buf.copy_from_slice(&lock(&self.backing)[range]);
        Ok(())
    }

    pub fn read_vec(&self, at: usize, len: usize) -> Result<Vec<u8>, TeeError> {
        let mut out = vec![0; len];
        self.read(at, &mut out)?;
        Ok(out)
    }

    pub fn write(&self, at: usize, data: &[u8]) -> Result<(), TeeError> {
        let range = self.check(at, data.len())?;
        lock(&self.backing)[range].copy_from_slice(data);
        Ok(())
    }

    /// Runs `f` over `[at, at + len)` without copying.
    pub fn with_slice<T>(
        &self,
        at: usize,
        len: usize,
        f: impl FnOnce(&[u8]) -> T,
    ) -> Result<T, TeeError> {
        let range = self.check(at, len)?;
        Ok(f(&lock(&self.backing)[range]))
    }
}

/// A parameter as seen by trusted code.
#[derive(Debug, Clone)]
pub enum TaParam {
    None,
    Value { a: u64, b: u64 },
    MemRef(TaMemRef),
}

impl TaParam {
    pub fn as_memref(&self) -> Result<&TaMemRef, TeeError> {
        match self {
            TaParam::MemRef(m) => Ok(m),
            _ => Err(TeeError::BadParameters(
                "expected a memory reference".into(),
            )),
        }
    }

    pub fn as_value(&self) -> Result<(u64, u64), TeeError> {
        match self {
            TaParam::Value { a, b } => Ok((*a, *b)),
            _ => Err(TeeError::BadParameters("expected a value".into())),
        }
    }
}
