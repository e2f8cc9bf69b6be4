// SPDX-License-Identifier: Apache-2.0

//! Heap accounting for code that runs on the trusted side.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("out of memory: requested {requested} bytes, {available} available")]
pub struct OutOfMemory {
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug)]
struct Budget {
    cap: usize,
    used: AtomicUsize,
}

/// A shared byte budget. Cloning yields another handle to the same budget.
#[derive(Debug, Clone)]
pub struct HeapBudget(Arc<Budget>);

impl HeapBudget {
    pub fn new(cap: usize) -> Self {
        HeapBudget(Arc::new(Budget {
            cap,
            used: AtomicUsize::new(0),
        }))
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX)
    }

    pub fn cap(&self) -> usize {
        self.0.cap
    }

    pub fn used(&self) -> usize {
        self.0.used.load(Ordering::Acquire)
    }

    /// Reserves `bytes`; the reservation is returned to the budget on drop.
    pub fn reserve(&self, bytes: usize) -> Result<Reservation, OutOfMemory> {
        let mut used = self.0.used.load(Ordering::Acquire);
        loop {
            let available = self.0.cap - used;
            if bytes > available {
                return Err(OutOfMemory {
                    requested: bytes,
                    available,
                });
            }
            match self.0.used.compare_exchange_weak(
                used,
                used + bytes,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    return Ok(Reservation {
                        budget: self.clone(),
                        bytes,
                    })
                }
                Err(now) => used = now,
            }
        }
    }

    /// Allocates a zeroed buffer charged against the budget.
    pub fn alloc(&self, len: usize) -> Result<BudgetBuf, OutOfMemory> {
        let reservation = self.reserve(len)?;
        Ok(BudgetBuf {
            data: vec![0; len],
            _reservation: reservation,
        })
    }
}

#[derive(Debug)]
pub struct Reservation {
    budget: HeapBudget,
    bytes: usize,
}

impl Reservation {
    pub fn bytes(&self) -> usize {
        self.bytes
    }
}

impl Drop for Reservation {
    fn drop(&mut self) {
        self.budget.0.used.fetch_sub(self.bytes, Ordering::AcqRel);
    }
}

/// A byte buffer whose size is charged to a [`HeapBudget`].
#[derive(Debug)]
pub struct BudgetBuf {
    data: Vec<u8>,
    _reservation: Reservation,
}

impl std::ops::Deref for BudgetBuf {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.data
    }
}

impl std::ops::DerefMut for BudgetBuf {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}
