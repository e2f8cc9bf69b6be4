// SPDX-License-Identifier: Apache-2.0

//! File-backed shared memory used to hand socket payloads to the supplicant.
//!
//! Each side maps the same file with `MAP_SHARED`, so the segment works
//! identically between two threads or two processes. Access is serialized by
//! the request/response protocol on the control pipe.

use std::fs::OpenOptions;
use std::io;
use std::path::Path;
use std::sync::atomic::{fence, Ordering};

use memmap2::MmapMut;
use tempfile::NamedTempFile;

pub struct SharedSegment {
    map: MmapMut,
}

fn backing_file() -> io::Result<NamedTempFile> {
    let shm = Path::new("/dev/shm");
    if shm.is_dir() {
        if let Ok(f) = tempfile::Builder::new().prefix("tzperf-").tempfile_in(shm) {
            return Ok(f);
        }
    }
    tempfile::Builder::new().prefix("tzperf-").tempfile()
}

impl SharedSegment {
    /// Creates a backing file of `len` bytes and maps it. The file is removed
    /// when the returned handle drops; other mappings stay valid.
    pub fn create(len: usize) -> io::Result<(SharedSegment, NamedTempFile)> {
        let file = backing_file()?;
        file.as_file().set_len(len as u64)?;
        let segment = Self::open(file.path(), len)?;
        Ok((segment, file))
    }

    pub fn open(path: &Path, len: usize) -> io::Result<SharedSegment> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        if file.metadata()?.len() < len as u64 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "segment file is shorter than requested length",
            ));
        }
        // SAFETY: the file is private to the relay pair and never truncated
        // while mapped.
        let map = unsafe { memmap2::MmapOptions::new().len(len).map_mut(&file)? };
        Ok(SharedSegment { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn check(&self, offset: u64, len: u64) -> io::Result<std::ops::Range<usize>> {
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= self.map.len() as u64);
        match end {
            Some(end) => Ok(offset as usize..end as usize),
            None => Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "segment range {offset}+{len} exceeds {} bytes",
                    self.map.len()
                ),
            )),
        }
    }

    pub fn slice(&self, offset: u64, len: u64) -> io::Result<&[u8]> {
        let range = self.check(offset, len)?;
        fence(Ordering::SeqCst);
        Ok(&self.map[range])
    }

    pub fn slice_mut(&mut self, offset: u64, len: u64) -> io::Result<&mut [u8]> {
        let range = self.check(offset, len)?;
        fence(Ordering::SeqCst);
        Ok(&mut self.map[range])
    }

    pub fn write_at(&mut self, offset: u64, data: &[u8]) -> io::Result<()> {
        self.slice_mut(offset, data.len() as u64)?
            .copy_from_slice(data);
        fence(Ordering::SeqCst);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_mappings_share_bytes() {
        let (mut a, file) = SharedSegment::create(4096).unwrap();
        let b = SharedSegment::open(file.path(), 4096).unwrap();
        a.write_at(100, b"hello").unwrap();
        assert_eq!(b.slice(100, 5).unwrap(), b"hello");
        assert!(a.write_at(4094, b"abc").is_err());
        assert!(b.slice(u64::MAX, 2).is_err());
    }
}
