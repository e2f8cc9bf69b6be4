// SPDX-License-Identifier: Apache-2.0

//! Measuring sink. Accepts TCP connections and UDP datagrams, drains them
//! into a fixed buffer and reports one [`FlowRecord`] per flow, in completion
//! order.
//!
//! A UDP flow is the traffic from one source address and port; it ends after
//! [`ServerConfig::udp_idle_timeout`] without datagrams.

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use socket2::SockRef;

use crate::config::{Protocol, DEFAULT_PORT};
use crate::metrics::ServerMetrics;
use crate::timing::unix_now;
use crate::units::DEFAULT_BUFFER;

/// How often blocked workers wake up to check for shutdown.
const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub host: String,
    /// 0 picks an ephemeral port (TCP and UDP then differ).
    pub port: u16,
    pub buffer_size: usize,
    pub socket_buffer_size: usize,
    pub udp: bool,
    pub udp_idle_timeout: Duration,
    pub rtt_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "0.0.0.0".into(),
            port: DEFAULT_PORT,
            buffer_size: DEFAULT_BUFFER,
            socket_buffer_size: DEFAULT_BUFFER,
            udp: true,
            udp_idle_timeout: Duration::from_secs(2),
            rtt_interval: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub protocol: Protocol,
    pub peer: SocketAddr,
    /// Unix time the flow was accepted or its first datagram arrived.
    pub started_unix: f64,
    pub metrics: ServerMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportInfo {
    /// Seconds.
    pub smoothed_rtt: f64,
    pub max_segment_size: u32,
}

/// Kernel TCP state for a connection that can still carry data.
#[cfg(target_os = "linux")]
fn is_live_state(state: u8) -> bool {
    // ESTABLISHED, FIN_WAIT1, FIN_WAIT2, CLOSE_WAIT
    matches!(state, 1 | 4 | 5 | 8)
}

/// Reads the kernel's smoothed RTT and MSS for a live TCP socket.
#[cfg(target_os = "linux")]
pub fn probe_transport(socket: &impl std::os::fd::AsRawFd) -> Option<TransportInfo> {
    let mut info: libc::tcp_info = unsafe { std::mem::zeroed() };
    let mut len = std::mem::size_of::<libc::tcp_info>() as libc::socklen_t;
    // SAFETY: `info` is a properly sized, writable tcp_info and `len` holds its size.
    let rc = unsafe {
        libc::getsockopt(
            socket.as_raw_fd(),
            libc::IPPROTO_TCP,
            libc::TCP_INFO,
            (&mut info as *mut libc::tcp_info).cast(),
            &mut len,
        )
    };
    if rc != 0 || !is_live_state(info.tcpi_state) || info.tcpi_snd_mss == 0 {
        return None;
    }
    Some(TransportInfo {
        smoothed_rtt: f64::from(info.tcpi_rtt) / 1e6,
        max_segment_size: info.tcpi_snd_mss,
    })
}

#[cfg(not(target_os = "linux"))]
pub fn probe_transport<T>(_socket: &T) -> Option<TransportInfo> {
    None
}

/// Per-flow byte accounting shared by the TCP and UDP paths.
struct Tally {
    started_unix: f64,
    first: Option<Instant>,
    last: Option<Instant>,
    bytes: u64,
    calls: u64,
    digest: crc32fast::Hasher,
}

impl Tally {
    fn new() -> Tally {
        Tally {
            started_unix: unix_now(),
            first: None,
            last: None,
            bytes: 0,
            calls: 0,
            digest: crc32fast::Hasher::new(),
        }
    }

    fn record(&mut self, data: &[u8]) {
        let now = Instant::now();
        self.first.get_or_insert(now);
        self.last = Some(now);
        self.bytes += data.len() as u64;
        self.calls += 1;
        self.digest.update(data);
    }

    fn finish(self) -> ServerMetrics {
        let runtime = match (self.first, self.last) {
            (Some(a), Some(b)) => b.duration_since(a).as_secs_f64(),
            _ => 0.0,
        };
        ServerMetrics {
            bytes_received: self.bytes,
            receive_calls: self.calls,
            runtime,
            digest: self.digest.finalize(),
            ..Default::default()
        }
    }
}

pub struct ServerHandle {
    tcp_addr: SocketAddr,
    udp_addr: Option<SocketAddr>,
    records: Receiver<FlowRecord>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    /// Blocks until the next flow completes.
    pub fn next_record(&self) -> Option<FlowRecord> {
        self.records.recv().ok()
    }

    pub fn next_record_timeout(&self, timeout: Duration) -> Option<FlowRecord> {
        self.records.recv_timeout(timeout).ok()
    }

    pub fn records(&self) -> &Receiver<FlowRecord> {
        &self.records
    }

    /// Stops accepting, ends every open flow and returns the records not yet
    /// consumed.
    pub fn shutdown(mut self) -> Vec<FlowRecord> {
        self.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        self.records.try_iter().collect()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds the listeners and starts serving in background threads.
pub fn serve(cfg: &ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind((cfg.host.as_str(), cfg.port))?;
    listener.set_nonblocking(true)?;
    let tcp_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, records) = mpsc::channel();
    let mut threads = Vec::new();

    let udp_addr = if cfg.udp {
        let socket = UdpSocket::bind((cfg.host.as_str(), cfg.port))?;
        let _ = SockRef::from(&socket).set_recv_buffer_size(cfg.socket_buffer_size);
        socket.set_read_timeout(Some(POLL))?;
        let addr = socket.local_addr()?;
        let (cfg, stop, tx) = (cfg.clone(), stop.clone(), tx.clone());
        threads.push(thread::spawn(move || serve_udp(socket, &cfg, &stop, &tx)));
        Some(addr)
    } else {
        None
    };

    let cfg = cfg.clone();
    let acceptor_stop = stop.clone();
    threads.push(thread::spawn(move || {
        accept_loop(listener, &cfg, &acceptor_stop, tx)
    }));
    Ok(ServerHandle {
        tcp_addr,
        udp_addr,
        records,
        stop,
        threads,
    })
}

fn accept_loop(
    listener: TcpListener,
    cfg: &ServerConfig,
    stop: &Arc<AtomicBool>,
    tx: Sender<FlowRecord>,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("accepted {peer}");
                let (cfg, stop, tx) = (cfg.clone(), stop.clone(), tx.clone());
                workers.push(thread::spawn(move || {
                    let record = drain_tcp(stream, peer, &cfg, &stop);
                    let _ = tx.send(record);
                }));
                workers.retain(|w| !w.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2))
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Reads one connection to completion.
pub fn drain_tcp(
    mut stream: TcpStream,
    peer: SocketAddr,
    cfg: &ServerConfig,
    stop: &AtomicBool,
) -> FlowRecord {
    let mut tally = Tally::new();
    let mut error = None;
    let mut samples = Vec::new();
    let mut last_info = None;
    let setup = stream
        .set_nonblocking(false)
        .and_then(|_| stream.set_read_timeout(Some(POLL)));
    if let Err(e) = setup {
        error = Some(e.to_string());
    }
    let _ = SockRef::from(&stream).set_recv_buffer_size(cfg.socket_buffer_size);
    let mut buf = vec![0u8; cfg.buffer_size.max(1)];
    let mut next_probe = Instant::now() + cfg.rtt_interval;
    while error.is_none() {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => tally.record(&buf[..n]),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                if stop.load(Ordering::Acquire) {
                    break;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => error = Some(e.to_string()),
        }
        if Instant::now() >= next_probe {
            if let Some(info) = probe_transport(&stream) {
                samples.push(info.smoothed_rtt);
                last_info = Some(info);
            }
            next_probe += cfg.rtt_interval;
        }
    }
    // The peer has only half-closed, so the connection is still probeable.
    if let Some(info) = probe_transport(&stream) {
        samples.push(info.smoothed_rtt);
        last_info = Some(info);
    }
    let started_unix = tally.started_unix;
    let mut metrics = tally.finish();
    metrics.smoothed_rtt = last_info.map(|i| i.smoothed_rtt);
    metrics.max_segment_size = last_info.map(|i| i.max_segment_size);
    metrics.rtt_samples = samples;
    metrics.error = error;
    FlowRecord {
        protocol: Protocol::Tcp,
        peer,
        started_unix,
        metrics,
    }
}

fn udp_record(peer: SocketAddr, tally: Tally) -> FlowRecord {
    FlowRecord {
        protocol: Protocol::Udp,
        peer,
        started_unix: tally.started_unix,
        metrics: tally.finish(),
    }
}

fn serve_udp(socket: UdpSocket, cfg: &ServerConfig, stop: &AtomicBool, tx: &Sender<FlowRecord>) {
    let mut flows: HashMap<SocketAddr, Tally> = HashMap::new();
    let mut buf = vec![0u8; cfg.buffer_size.max(crate::config::MAX_UDP_PAYLOAD)];
    while !stop.load(Ordering::Acquire) {
        match socket.recv_from(&mut buf) {
            Ok((n, peer)) => flows
                .entry(peer)
                .or_insert_with(Tally::new)
                .record(&buf[..n]),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                warn!("udp receive failed: {e}");
                thread::sleep(POLL);
            }
        }
        let now = Instant::now();
        let mut idle: Vec<(SocketAddr, Instant)> = flows
            .iter()
            .filter_map(|(peer, t)| {
                let last = t.last?;
                (now.duration_since(last) >= cfg.udp_idle_timeout).then_some((*peer, last))
            })
            .collect();
        idle.sort_by_key(|(_, last)| *last);
        for (peer, _) in idle {
            let tally = flows.remove(&peer).expect("present");
            let _ = tx.send(udp_record(peer, tally));
        }
    }
    let mut rest: Vec<(SocketAddr, Tally)> = flows.into_iter().collect();
    rest.sort_by_key(|(_, t)| t.last);
    for (peer, tally) in rest {
        let _ = tx.send(udp_record(peer, tally));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::net::Shutdown;

    fn local() -> ServerConfig {
        ServerConfig {
            host: "127.0.0.1".into(),
            port: 0,
            udp_idle_timeout: Duration::from_millis(300),
            ..ServerConfig::default()
        }
    }

    fn send_all(addr: SocketAddr, data: &[u8]) {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(data).unwrap();
        s.shutdown(Shutdown::Write).unwrap();
        // Wait for the server to close its side.
        let _ = s.read(&mut [0u8; 1]);
    }

    #[test]
    fn counts_every_byte() {
        let server = serve(&local()).unwrap();
        let data: Vec<u8> = (0..1_310_720u32).map(|i| (i % 251) as u8).collect();
        send_all(server.tcp_addr(), &data);
        let rec = server.next_record_timeout(Duration::from_secs(10)).unwrap();
        assert_eq!(rec.protocol, Protocol::Tcp);
        assert_eq!(rec.metrics.bytes_received, 1_310_720);
        assert_eq!(rec.metrics.digest, crc32fast::hash(&data));
        assert!(rec.metrics.receive_calls >= 1);
        assert!(rec.metrics.error.is_none());
    }

    #[test]
    fn zero_byte_connection() {
        let server = serve(&local()).unwrap();
        send_all(server.tcp_addr(), &[]);
        let rec = server.next_record_timeout(Duration::from_secs(10)).unwrap();
        assert_eq!(rec.metrics.bytes_received, 0);
        assert_eq!(rec.metrics.runtime, 0.0);
    }

    #[test]
    fn sequential_connections_in_order() {
        let server = serve(&local()).unwrap();
        send_all(server.tcp_addr(), &[1; 100]);
        let first = server.next_record_timeout(Duration::from_secs(10)).unwrap();
        send_all(server.tcp_addr(), &[2; 200]);
        let second = server.next_record_timeout(Duration::from_secs(10)).unwrap();
        assert_eq!(first.metrics.bytes_received, 100);
        assert_eq!(second.metrics.bytes_received, 200);
        assert!(server.shutdown().is_empty());
    }

    #[test]
    fn transport_introspection() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let client = TcpStream::connect(listener.local_addr().unwrap()).unwrap();
        let (server_side, _) = listener.accept().unwrap();
        let info = probe_transport(&server_side).expect("live loopback connection");
        assert!(info.max_segment_size >= 536);
        assert!(info.smoothed_rtt >= 0.0);
        drop(client);
        drop(server_side);

        let unconnected =
            socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::STREAM, None).unwrap();
        assert_eq!(probe_transport(&unconnected), None);
        let udp = UdpSocket::bind("127.0.0.1:0").unwrap();
        assert_eq!(probe_transport(&udp), None);
    }

    #[test]
    fn udp_flows_end_when_idle() {
        let server = serve(&local()).unwrap();
        let target = server.udp_addr().unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        for _ in 0..10 {
            client.send_to(&[7; 1000], target).unwrap();
        }
        let rec = server.next_record_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(rec.protocol, Protocol::Udp);
        assert_eq!(rec.peer, client.local_addr().unwrap());
        assert_eq!(rec.metrics.bytes_received, 10_000);
        assert_eq!(rec.metrics.receive_calls, 10);
        assert_eq!(rec.metrics.smoothed_rtt, None);
        assert_eq!(rec.metrics.max_segment_size, None);
    }
}
