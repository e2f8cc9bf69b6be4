// SPDX-License-Identifier: Apache-2.0

//! Socket facade available to trusted code. Every call except
//! [`TrustedEnv::socket_error`] is relayed to the supplicant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rpc::{opcode, RpcDescriptor};
use super::{ContextInner, TeeError};
use crate::config::Protocol;
use crate::memory::{BudgetBuf, HeapBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SocketState {
    Open,
    Closed,
    Error,
}

/// Protocol-specific controls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ioctl {
    /// Sets both SO_SNDBUF and SO_RCVBUF.
    SetBufSizes(usize),
    /// Retargets a UDP socket.
    SetPeer { host: String, port: u16 },
}

#[derive(Debug)]
pub struct TeeSocket {
    handle: u32,
    protocol: Protocol,
    state: SocketState,
    last_error: i32,
}

impl TeeSocket {
    pub fn handle(&self) -> u32 {
        self.handle
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn state(&self) -> SocketState {
        self.state
    }
}

/// Runtime services handed to trusted code for the duration of a call.
pub struct TrustedEnv {
    pub(crate) ctx: Arc<ContextInner>,
    pub(crate) heap: HeapBudget,
}

impl TrustedEnv {
    pub fn heap(&self) -> &HeapBudget {
        &self.heap
    }

    /// Allocates a zeroed buffer from the trusted heap.
    pub fn alloc(&self, len: usize) -> Result<BudgetBuf, TeeError> {
        Ok(self.heap.alloc(len)?)
    }

    /// One relayed round trip: leave the secure side, run the request in the
    /// supplicant, come back.
    fn relay(
        &self,
        op: u8,
        handle: u32,
        payload: Option<&[u8]>,
        length: u64,
        out: Option<&mut [u8]>,
    ) -> Result<i64, TeeError> {
        let mut guard = self.ctx.relay()?;
        let relay = guard.as_mut().expect("relay initialized");
        self.ctx.cross();
        let mut copied = 0u64;
        let result = (|| {
            let mut length = length;
            if let Some(data) = payload {
                let n = data.len().min(relay.segment_len());
                relay
                    .segment_mut()
                    .write_at(0, &data[..n])
                    .map_err(|e| TeeError::Communication(e.to_string()))?;
                length = n as u64;
                if op == opcode::SEND {
                    copied += length;
                }
            }
            if let Some(buf) = out.as_ref() {
                length = buf.len().min(relay.segment_len()) as u64;
            }
            let resp = relay.call(RpcDescriptor::request(op, handle, 0, length))?;
            if let Some(buf) = out {
                if resp.status > 0 {
                    let n = resp.status as usize;
                    let src = relay
                        .segment()
                        .slice(0, n as u64)
                        .map_err(|e| TeeError::Communication(e.to_string()))?;
                    buf[..n].copy_from_slice(src);
                    copied += n as u64;
                }
            }
            Ok(resp.status)
        })();
        self.ctx.stats.rpc();
        self.ctx.stats.copied(copied);
        self.ctx.cross();
        result
    }

    fn usable(sock: &TeeSocket) -> Result<(), TeeError> {
        match sock.state {
            SocketState::Open => Ok(()),
            SocketState::Closed => Err(TeeError::BadState("socket is closed")),
            SocketState::Error => Err(TeeError::BadState("socket is in error state")),
        }
    }

    fn fail(sock: &mut TeeSocket, status: i64) -> TeeError {
        let errno = (-status) as i32;
        sock.last_error = errno;
        sock.state = SocketState::Error;
        TeeError::Socket { errno }
    }

    pub fn socket_open(
        &mut self,
        host: &str,
        port: u16,
        protocol: Protocol,
    ) -> Result<TeeSocket, TeeError> {
        let target = format!("{host}:{port}");
        let op = match protocol {
            Protocol::Tcp => opcode::OPEN_TCP,
            Protocol::Udp => opcode::OPEN_UDP,
        };
        let status = self.relay(op, 0, Some(target.as_bytes()), 0, None)?;
        if status < 0 {
            return Err(TeeError::Socket {
                errno: (-status) as i32,
            });
        }
        Ok(TeeSocket {
            handle: status as u32,
            protocol,
            state: SocketState::Open,
            last_error: 0,
        })
    }

    /// Returns the number of bytes the supplicant wrote to the OS socket.
    pub fn socket_send(&mut self, sock: &mut TeeSocket, data: &[u8]) -> Result<usize, TeeError> {
        Self::usable(sock)?;
        let status = self.relay(opcode::SEND, sock.handle, Some(data), 0, None)?;
        if status < 0 {
            return Err(Self::fail(sock, status));
        }
        Ok(status as usize)
    }

    pub fn socket_recv(&mut self, sock: &mut TeeSocket, buf: &mut [u8]) -> Result<usize, TeeError> {
        Self::usable(sock)?;
        let status = self.relay(opcode::RECV, sock.handle, None, 0, Some(buf))?;
        if status < 0 {
            return Err(Self::fail(sock, status));
        }
        Ok(status as usize)
    }

    pub fn socket_ioctl(&mut self, sock: &mut TeeSocket, ctl: &Ioctl) -> Result<(), TeeError> {
        Self::usable(sock)?;
        let status = match ctl {
            Ioctl::SetBufSizes(size) => {
                self.relay(opcode::SET_BUF_SIZES, sock.handle, None, *size as u64, None)?
            }
            Ioctl::SetPeer { host, port } => {
                if sock.protocol != Protocol::Udp {
                    return Err(TeeError::BadParameters(
                        "SET_PEER applies to UDP sockets only".into(),
                    ));
                }
                let target = format!("{host}:{port}");
                self.relay(
                    opcode::SET_PEER,
                    sock.handle,
                    Some(target.as_bytes()),
                    0,
                    None,
                )?
            }
        };
        if status < 0 {
            return Err(Self::fail(sock, status));
        }
        Ok(())
    }

    /// Closes the socket. Closing twice is an error; a socket in error state
    /// can still be closed.
    pub fn socket_close(&mut self, sock: &mut TeeSocket) -> Result<(), TeeError> {
        if sock.state == SocketState::Closed {
            return Err(TeeError::BadState("socket is closed"));
        }
        let status = self.relay(opcode::CLOSE, sock.handle, None, 0, None)?;
        sock.state = SocketState::Closed;
        if status < 0 {
            sock.last_error = (-status) as i32;
            return Err(TeeError::Socket {
                errno: sock.last_error,
            });
        }
        Ok(())
    }

    /// The OS errno of the last failed operation on `sock`, or 0.
    pub fn socket_error(&self, sock: &TeeSocket) -> i32 {
        sock.last_error
    }
}
