// SPDX-License-Identifier: Apache-2.0

//! Socket RPC between the trusted side and the supplicant.
//!
//! Every request and response is one 32-byte little-endian descriptor on the
//! control pipe:
//!
//! ```text
//! offset  size  field
//!      0     4  command    low 8 bits: opcode, high 24 bits: socket handle
//!      4     4  region_id  shared segment holding the payload (always 0)
//!      8     8  offset     payload offset inside the segment
//!     16     8  length     payload length, or the ioctl argument
//!     24     8  status     request: 0; response: result >= 0 or -errno
//! ```
//!
//! Payload conventions per opcode:
//!
//! | opcode            | request payload            | response status        |
//! |-------------------|----------------------------|------------------------|
//! | `OPEN_TCP/UDP`    | `host:port` UTF-8          | new socket handle      |
//! | `SEND`            | bytes to send              | bytes written          |
//! | `RECV`            | `length` = max bytes       | bytes read into payload|
//! | `CLOSE`           | none                       | 0                      |
//! | `SET_BUF_SIZES`   | `length` = buffer size     | 0                      |
//! | `SET_PEER`        | `host:port` UTF-8 (UDP)    | 0                      |

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs, UdpSocket};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::thread::JoinHandle;

use log::{debug, warn};
use socket2::SockRef;

use super::segment::SharedSegment;
use super::TeeError;

pub const DESCRIPTOR_LEN: usize = 32;
pub const RELAY_SEGMENT_ID: u32 = 0;

pub mod opcode {
    pub const OPEN_TCP: u8 = 1;
    pub const OPEN_UDP: u8 = 2;
    pub const SEND: u8 = 3;
    pub const RECV: u8 = 4;
    pub const CLOSE: u8 = 5;
    pub const SET_BUF_SIZES: u8 = 6;
    pub const SET_PEER: u8 = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RpcDescriptor {
    pub command: u32,
    pub region_id: u32,
    pub offset: u64,
    pub length: u64,
    pub status: i64,
}

impl RpcDescriptor {
    pub fn request(op: u8, handle: u32, offset: u64, length: u64) -> Self {
        RpcDescriptor {
            command: u32::from(op) | (handle << 8),
            region_id: RELAY_SEGMENT_ID,
            offset,
            length,
            status: 0,
        }
    }

    pub fn opcode(&self) -> u8 {
        (self.command & 0xff) as u8
    }

    pub fn handle(&self) -> u32 {
        self.command >> 8
    }

    pub fn encode(&self) -> [u8; DESCRIPTOR_LEN] {
        let mut out = [0u8; DESCRIPTOR_LEN];
        out[0..4].copy_from_slice(&self.command.to_le_bytes());
        out[4..8].copy_from_slice(&self.region_id.to_le_bytes());
        out[8..16].copy_from_slice(&self.offset.to_le_bytes());
        out[16..24].copy_from_slice(&self.length.to_le_bytes());
        out[24..32].copy_from_slice(&self.status.to_le_bytes());
        out
    }

    pub fn decode(raw: &[u8; DESCRIPTOR_LEN]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(raw[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(raw[i..i + 8].try_into().unwrap());
        RpcDescriptor {
            command: u32_at(0),
            region_id: u32_at(4),
            offset: u64_at(8),
            length: u64_at(16),
            status: u64_at(24) as i64,
        }
    }

    fn read_from(r: &mut impl Read) -> io::Result<Option<Self>> {
        let mut raw = [0u8; DESCRIPTOR_LEN];
        match r.read_exact(&mut raw) {
            Ok(()) => Ok(Some(Self::decode(&raw))),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e),
        }
    }
}

enum RelaySocket {
    Tcp(TcpStream),
    Udp(UdpSocket),
}

impl RelaySocket {
    fn sock_ref(&self) -> SockRef<'_> {
        match self {
            RelaySocket::Tcp(s) => SockRef::from(s),
            RelaySocket::Udp(s) => SockRef::from(s),
        }
    }
}

fn errno(e: &io::Error) -> i64 {
    -i64::from(e.raw_os_error().unwrap_or(libc::EIO))
}

fn resolve(payload: &[u8]) -> io::Result<SocketAddr> {
    let text =
        std::str::from_utf8(payload).map_err(|_| io::Error::from_raw_os_error(libc::EINVAL))?;
    let (host, port) = text
        .rsplit_once(':')
        .ok_or_else(|| io::Error::from_raw_os_error(libc::EINVAL))?;
    let host = host.trim_start_matches('[').trim_end_matches(']');
    let port: u16 = port
        .parse()
        .map_err(|_| io::Error::from_raw_os_error(libc::EINVAL))?;
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::from_raw_os_error(libc::EHOSTUNREACH))
}

fn bind_any_for(peer: &SocketAddr) -> io::Result<UdpSocket> {
    match peer {
        SocketAddr::V4(_) => UdpSocket::bind(("0.0.0.0", 0)),
        SocketAddr::V6(_) => UdpSocket::bind(("::", 0)),
    }
}

/// The normal-world agent: executes socket requests against the host OS.
struct Supplicant {
    sockets: HashMap<u32, RelaySocket>,
    next_handle: u32,
}

impl Supplicant {
    fn new() -> Self {
        Supplicant {
            sockets: HashMap::new(),
            next_handle: 1,
        }
    }

    fn handle(&mut self, req: &RpcDescriptor, segment: &mut SharedSegment) -> i64 {
        if req.region_id != RELAY_SEGMENT_ID {
            return -i64::from(libc::EINVAL);
        }
        let result = match req.opcode() {
            opcode::OPEN_TCP | opcode::OPEN_UDP => self.open(req, segment),
            opcode::SEND => self.send(req, segment),
            opcode::RECV => self.recv(req, segment),
            opcode::CLOSE => match self.sockets.remove(&req.handle()) {
                Some(_) => Ok(0),
                None => Err(io::Error::from_raw_os_error(libc::EBADF)),
            },
            opcode::SET_BUF_SIZES => self.with_socket(req.handle(), |s| {
                let size = usize::try_from(req.length)
                    .map_err(|_| io::Error::from_raw_os_error(libc::EINVAL))?;
                let sock = s.sock_ref();
                sock.set_send_buffer_size(size)?;
                sock.set_recv_buffer_size(size)?;
                Ok(0)
            }),
            opcode::SET_PEER => {
                let peer = segment.slice(req.offset, req.length).and_then(resolve);
                self.with_socket(req.handle(), |s| match s {
                    RelaySocket::Udp(u) => {
                        u.connect(peer?)?;
                        Ok(0)
                    }
                    RelaySocket::Tcp(_) => Err(io::Error::from_raw_os_error(libc::EOPNOTSUPP)),
                })
            }
            _ => Err(io::Error::from_raw_os_error(libc::ENOSYS)),
        };
        result.unwrap_or_else(|e| errno(&e))
    }

    fn with_socket(
        &mut self,
        handle: u32,
        f: impl FnOnce(&mut RelaySocket) -> io::Result<i64>,
    ) -> io::Result<i64> {
        match self.sockets.get_mut(&handle) {
            Some(s) => f(s),
            None => Err(io::Error::from_raw_os_error(libc::EBADF)),
        }
    }

    fn open(&mut self, req: &RpcDescriptor, segment: &SharedSegment) -> io::Result<i64> {
        let peer = resolve(segment.slice(req.offset, req.length)?)?;
        let socket = if req.opcode() == opcode::OPEN_TCP {
            RelaySocket::Tcp(TcpStream::connect(peer)?)
        } else {
            let udp = bind_any_for(&peer)?;
            udp.connect(peer)?;
            RelaySocket::Udp(udp)
        };
        let handle = self.next_handle;
        self.next_handle = (self.next_handle + 1) & 0x00ff_ffff;
        self.sockets.insert(handle, socket);
        debug!("supplicant: opened socket {handle} to {peer}");
        Ok(i64::from(handle))
    }

    fn send(&mut self, req: &RpcDescriptor, segment: &SharedSegment) -> io::Result<i64> {
        let payload = segment.slice(req.offset, req.length)?;
        self.with_socket(req.handle(), |s| match s {
            RelaySocket::Tcp(t) => {
                let mut written = 0;
                while written < payload.len() {
                    match t.write(&payload[written..]) {
                        Ok(0) => break,
                        Ok(n) => written += n,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                        Err(e) if written == 0 => return Err(e),
                        Err(_) => break,
                    }
                }
                Ok(written as i64)
            }
            RelaySocket::Udp(u) => Ok(u.send(payload)? as i64),
        })
    }

    fn recv(&mut self, req: &RpcDescriptor, segment: &mut SharedSegment) -> io::Result<i64> {
        let buf = segment.slice_mut(req.offset, req.length)?;
        self.with_socket(req.handle(), |s| match s {
            RelaySocket::Tcp(t) => Ok(t.read(buf)? as i64),
            RelaySocket::Udp(u) => Ok(u.recv(buf)? as i64),
        })
    }
}

/// Services requests until the control pipe reaches end of file.
pub fn serve_supplicant(
    mut rx: impl Read,
    mut tx: impl Write,
    segment: &mut SharedSegment,
) -> io::Result<()> {
    let mut supplicant = Supplicant::new();
    while let Some(req) = RpcDescriptor::read_from(&mut rx)? {
        let status = supplicant.handle(&req, segment);
        let resp = RpcDescriptor { status, ..req };
        tx.write_all(&resp.encode())?;
        tx.flush()?;
    }
    Ok(())
}

/// Entry point for a supplicant child process: control pipe on stdin/stdout.
pub fn serve_stdio(segment_path: &Path, segment_len: usize) -> io::Result<()> {
    let mut segment = SharedSegment::open(segment_path, segment_len)?;
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    serve_supplicant(stdin, stdout, &mut segment)
}

/// Where the supplicant runs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum RelayMode {
    /// A thread of the current process. Same protocol, no extra process.
    #[default]
    Thread,
    /// A child process: `<program> supplicant --segment <path> --segment-size <n>`.
    Process { program: PathBuf },
}

enum Backend {
    Thread {
        control: UnixStream,
        worker: Option<JoinHandle<io::Result<()>>>,
    },
    Process {
        stdin: Option<ChildStdin>,
        stdout: ChildStdout,
        child: Child,
    },
}

/// Trusted-side end of the relay.
pub struct Relay {
    backend: Backend,
    segment: SharedSegment,
    _file: tempfile::NamedTempFile,
}

impl Relay {
    pub fn spawn(mode: &RelayMode, segment_len: usize) -> io::Result<Relay> {
        let (segment, file) = SharedSegment::create(segment_len)?;
        let backend = match mode {
            RelayMode::Thread => {
                let mut remote = SharedSegment::open(file.path(), segment_len)?;
                let (control, peer) = UnixStream::pair()?;
                let worker = std::thread::Builder::new()
                    .name("tzperf-supplicant".into())
                    .spawn(move || {
                        let rx = peer.try_clone()?;
                        serve_supplicant(rx, peer, &mut remote)
                    })?;
                Backend::Thread {
                    control,
                    worker: Some(worker),
                }
            }
            RelayMode::Process { program } => {
                let mut child = Command::new(program)
                    .arg("supplicant")
                    .arg("--segment")
                    .arg(file.path())
                    .arg("--segment-size")
                    .arg(segment_len.to_string())
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Backend::Process {
                    stdin: Some(stdin),
                    stdout,
                    child,
                }
            }
        };
        Ok(Relay {
            backend,
            segment,
            _file: file,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.segment.len()
    }

    pub fn segment(&self) -> &SharedSegment {
        &self.segment
    }

    pub fn segment_mut(&mut self) -> &mut SharedSegment {
        &mut self.segment
    }

    /// Sends one descriptor and blocks for the response.
    pub fn call(&mut self, req: RpcDescriptor) -> Result<RpcDescriptor, TeeError> {
        let raw = req.encode();
        let resp = match &mut self.backend {
            Backend::Thread { control, .. } => control
                .write_all(&raw)
                .and_then(|_| RpcDescriptor::read_from(control)),
            Backend::Process { stdin, stdout, .. } => match stdin.as_mut() {
                Some(stdin) => stdin
                    .write_all(&raw)
                    .and_then(|_| stdin.flush())
                    .and_then(|_| RpcDescriptor::read_from(stdout)),
                None => Err(io::Error::from(io::ErrorKind::BrokenPipe)),
            },
        };
        match resp {
            Ok(Some(resp)) => Ok(resp),
            Ok(None) => Err(TeeError::Communication(
                "supplicant closed the control pipe".into(),
            )),
            Err(e) => Err(TeeError::Communication(e.to_string())),
        }
    }
}

impl Drop for Relay {
    fn drop(&mut self) {
        match &mut self.backend {
            Backend::Thread { control, worker } => {
                let _ = control.shutdown(std::net::Shutdown::Both);
                if let Some(Err(e)) = worker.take().map(|w| w.join()).and_then(Result::ok) {
                    warn!("supplicant thread failed: {e}");
                }
            }
            Backend::Process { stdin, child, .. } => {
                drop(stdin.take());
                if let Err(e) = child.wait() {
                    warn!("supplicant process wait failed: {e}");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn descriptor_layout_is_little_endian() {
        let d = RpcDescriptor {
            command: 0x0102_0304,
            region_id: 5,
            offset: 0x1122_3344_5566_7788,
            length: 9,
            status: -2,
        };
        let raw = d.encode();
        assert_eq!(&raw[0..4], &[4, 3, 2, 1]);
        assert_eq!(&raw[4..8], &[5, 0, 0, 0]);
        assert_eq!(raw[8], 0x88);
        assert_eq!(&raw[24..32], &(-2i64).to_le_bytes());
        assert_eq!(RpcDescriptor::decode(&raw), d);
    }

    #[test]
    fn command_packs_opcode_and_handle() {
        let d = RpcDescriptor::request(opcode::SEND, 0x00ab_cdef, 0, 1);
        assert_eq!(d.opcode(), opcode::SEND);
        assert_eq!(d.handle(), 0x00ab_cdef);
    }

    #[test]
    fn thread_relay_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let mut relay = Relay::spawn(&RelayMode::Thread, 4096).unwrap();

        let target = addr.to_string();
        relay.segment_mut().write_at(0, target.as_bytes()).unwrap();
        let open = relay
            .call(RpcDescriptor::request(
                opcode::OPEN_TCP,
                0,
                0,
                target.len() as u64,
            ))
            .unwrap();
        assert!(open.status > 0, "{open:?}");
        let handle = open.status as u32;
        let (mut accepted, _) = listener.accept().unwrap();

        relay.segment_mut().write_at(0, b"payload").unwrap();
        let sent = relay
            .call(RpcDescriptor::request(opcode::SEND, handle, 0, 7))
            .unwrap();
        assert_eq!(sent.status, 7);
        let mut got = [0u8; 7];
        accepted.read_exact(&mut got).unwrap();
        assert_eq!(&got, b"payload");

        accepted.write_all(b"back").unwrap();
        let recv = relay
            .call(RpcDescriptor::request(opcode::RECV, handle, 100, 64))
            .unwrap();
        assert_eq!(recv.status, 4);
        assert_eq!(relay.segment().slice(100, 4).unwrap(), b"back");

        let close = relay
            .call(RpcDescriptor::request(opcode::CLOSE, handle, 0, 0))
            .unwrap();
        assert_eq!(close.status, 0);
        let again = relay
            .call(RpcDescriptor::request(opcode::CLOSE, handle, 0, 0))
            .unwrap();
        assert_eq!(again.status, -i64::from(libc::EBADF));
    }

    #[test]
    fn refused_connection_reports_errno() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut relay = Relay::spawn(&RelayMode::Thread, 256).unwrap();
        let target = format!("127.0.0.1:{port}");
        relay.segment_mut().write_at(0, target.as_bytes()).unwrap();
        let open = relay
            .call(RpcDescriptor::request(
                opcode::OPEN_TCP,
                0,
                0,
                target.len() as u64,
            ))
            .unwrap();
        assert_eq!(open.status, -i64::from(libc::ECONNREFUSED));
    }

    #[test]
    fn foreign_region_rejected() {
        let mut relay = Relay::spawn(&RelayMode::Thread, 256).unwrap();
        let mut req = RpcDescriptor::request(opcode::CLOSE, 1, 0, 0);
        req.region_id = 7;
        assert_eq!(relay.call(req).unwrap().status, -i64::from(libc::EINVAL));
    }
}
