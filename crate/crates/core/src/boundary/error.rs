// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::memory::OutOfMemory;

/// Errors surfaced by the emulated TEE client API and the trusted-side runtime.
///
/// [`TeeError::code`] maps each variant onto the GlobalPlatform result code a
/// real TEE client would see.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeeError {
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error("bad state: {0}")]
    BadState(&'static str),
    #[error("context busy: {sessions} open session(s), {regions} allocated region(s)")]
    ContextBusy { sessions: usize, regions: usize },
    #[error("trusted app `{0}` not found")]
    UnknownApp(String),
    #[error("out of memory: requested {requested} bytes, {available} available")]
    OutOfMemory { requested: usize, available: usize },
    #[error("memory access fault: {0}")]
    Fault(String),
    #[error("command {0:#x} not supported")]
    NotSupported(u32),
    #[error("supplicant communication failed: {0}")]
    Communication(String),
    #[error("socket error: {} (errno {errno})", std::io::Error::from_raw_os_error(*errno).kind())]
    Socket { errno: i32 },
}

pub const TEE_SUCCESS: u32 = 0;
pub const TEE_ERROR_GENERIC: u32 = 0xFFFF_0000;
pub const TEE_ERROR_ACCESS_CONFLICT: u32 = 0xFFFF_0003;
pub const TEE_ERROR_BAD_PARAMETERS: u32 = 0xFFFF_0006;
pub const TEE_ERROR_BAD_STATE: u32 = 0xFFFF_0007;
pub const TEE_ERROR_ITEM_NOT_FOUND: u32 = 0xFFFF_0008;
pub const TEE_ERROR_NOT_SUPPORTED: u32 = 0xFFFF_000A;
pub const TEE_ERROR_OUT_OF_MEMORY: u32 = 0xFFFF_000C;
pub const TEE_ERROR_BUSY: u32 = 0xFFFF_000D;
pub const TEE_ERROR_COMMUNICATION: u32 = 0xFFFF_000E;
pub const TEE_ISOCKET_ERROR_PROTOCOL: u32 = 0xF100_7001;

impl TeeError {
    pub fn code(&self) -> u32 {
        match self {
            TeeError::BadParameters(_) => TEE_ERROR_BAD_PARAMETERS,
            TeeError::BadState(_) => TEE_ERROR_BAD_STATE,
            TeeError::ContextBusy { .. } => TEE_ERROR_BUSY,
            TeeError::UnknownApp(_) => TEE_ERROR_ITEM_NOT_FOUND,
            TeeError::OutOfMemory { .. } => TEE_ERROR_OUT_OF_MEMORY,
            TeeError::Fault(_) => TEE_ERROR_ACCESS_CONFLICT,
            TeeError::NotSupported(_) => TEE_ERROR_NOT_SUPPORTED,
            TeeError::Communication(_) => TEE_ERROR_COMMUNICATION,
            TeeError::Socket { .. } => TEE_ISOCKET_ERROR_PROTOCOL,
        }
    }
}

impl From<OutOfMemory> for TeeError {
    fn from(e: OutOfMemory) -> Self {
        TeeError::OutOfMemory {
            requested: e.requested,
            available: e.available,
        }
    }
}
