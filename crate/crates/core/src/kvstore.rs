// SPDX-License-Identifier: Apache-2.0

//! Hash-table key-value store with separate chaining and modular hashing.

use thiserror::Error;

use crate::memory::{HeapBudget, OutOfMemory, Reservation};

pub const BUCKETS: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KvError {
    #[error(transparent)]
    OutOfMemory(#[from] OutOfMemory),
    #[error("values must hold at least one byte")]
    EmptyValue,
}

#[derive(Debug)]
struct Entry {
    key: u64,
    value: Vec<u8>,
    _charge: Reservation,
}

#[derive(Debug)]
pub struct KvStore {
    buckets: Vec<Vec<Entry>>,
    len: usize,
    budget: HeapBudget,
}

impl Default for KvStore {
    fn default() -> Self {
        Self::new()
    }
}

impl KvStore {
    pub fn new() -> Self {
        Self::with_budget(HeapBudget::unlimited())
    }

    /// Every stored value is charged against `budget`.
    pub fn with_budget(budget: HeapBudget) -> Self {
        KvStore {
            buckets: (0..BUCKETS).map(|_| Vec::new()).collect(),
            len: 0,
            budget,
        }
    }

    pub fn bucket_of(key: u64) -> usize {
        (key % BUCKETS as u64) as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bucket_len(&self, bucket: usize) -> usize {
        self.buckets[bucket].len()
    }

    /// Stores a copy of `value`, replacing any previous value for `key`.
    pub fn put(&mut self, key: u64, value: &[u8]) -> Result<(), KvError> {
        if value.is_empty() {
            return Err(KvError::EmptyValue);
        }
        let charge = self.budget.reserve(value.len())?;
        let entry = Entry {
            key,
            value: value.to_vec(),
            _charge: charge,
        };
        let chain = &mut self.buckets[Self::bucket_of(key)];
        match chain.iter_mut().find(|e| e.key == key) {
            Some(slot) => *slot = entry,
            None => {
                chain.push(entry);
                self.len += 1;
            }
        }
        Ok(())
    }

    pub fn lookup(&self, key: u64) -> Option<&[u8]> {
        self.buckets[Self::bucket_of(key)]
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_slice())
    }

    /// Copies the value for `key` out of the store.
    pub fn get(&self, key: u64) -> Option<Vec<u8>> {
        self.lookup(key).map(<[u8]>::to_vec)
    }

    /// Returns whether `key` was present.
    pub fn del(&mut self, key: u64) -> bool {
        let chain = &mut self.buckets[Self::bucket_of(key)];
        match chain.iter().position(|e| e.key == key) {
            Some(i) => {
                chain.swap_remove(i);
                self.len -= 1;
                true
            }
            None => false,
        }
    }
}
