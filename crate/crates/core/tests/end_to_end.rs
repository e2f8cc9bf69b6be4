// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::Command;
use std::time::Duration;

use tzperf::boundary::RelayMode;
use tzperf::client::{fill_dummy, run_client};
use tzperf::config::{Execution, Protocol, RunConfig, ShareMode, StopCondition};
use tzperf::report::read_report;
use tzperf::server::{serve, ServerConfig, ServerHandle};
use tzperf::units::{KIB, MIB};

fn server() -> ServerHandle {
    serve(&ServerConfig {
        host: "127.0.0.1".into(),
        port: 0,
        udp_idle_timeout: Duration::from_millis(300),
        ..ServerConfig::default()
    })
    .unwrap()
}

fn process_relay() -> RelayMode {
    RelayMode::Process {
        program: PathBuf::from(env!("CARGO_BIN_EXE_tzperf")),
    }
}

fn fixed_bytes(port: u16, total: u64, chunk: usize) -> RunConfig {
    RunConfig {
        stop: StopCondition::FixedBytes { total_bytes: total },
        chunk_size: chunk,
        port,
        seed: 42,
        ..RunConfig::default()
    }
}

/// CRC of the first `total` bytes of the repeated dummy chunk.
fn expected_digest(chunk: usize, seed: u64, total: u64) -> u32 {
    let mut buf = vec![0; chunk];
    fill_dummy(&mut buf, seed);
    let mut h = crc32fast::Hasher::new();
    let mut left = total as usize;
    while left > 0 {
        let n = left.min(chunk);
        h.update(&buf[..n]);
        left -= n;
    }
    h.finalize()
}

#[test]
fn direct_tcp_run_is_conserved() {
    let srv = server();
    let cfg = fixed_bytes(srv.tcp_addr().port(), 10 * 128 * KIB as u64, 128 * KIB);
    let run = run_client(&cfg, RelayMode::Thread).unwrap();
    let flow = srv.next_record_timeout(Duration::from_secs(10)).unwrap();
    assert_eq!(run.metrics.transmit_calls, 10);
    assert_eq!(run.metrics.bytes_transferred, 1_310_720);
    assert_eq!(flow.metrics.bytes_received, 1_310_720);
    assert_eq!(flow.metrics.digest, run.metrics.digest);
    assert_eq!(
        run.metrics.digest,
        expected_digest(128 * KIB, 42, 1_310_720)
    );
    assert!(flow.metrics.max_segment_size.unwrap() >= 536);
    assert!(run.boundary.is_none());
}

#[test]
fn boundary_runs_match_direct_payload_in_every_mode() {
    for relay in [RelayMode::Thread, process_relay()] {
        for mode in [ShareMode::Whole, ShareMode::Partial, ShareMode::Temporary] {
            let srv = server();
            let total = 3 * MIB as u64 + 17;
            let cfg = RunConfig {
                execution: Execution::Boundary,
                shared_mode: mode,
                ..fixed_bytes(srv.tcp_addr().port(), total, 64 * KIB)
            };
            let run = run_client(&cfg, relay.clone()).unwrap();
            let flow = srv.next_record_timeout(Duration::from_secs(10)).unwrap();
            assert!(run.metrics.error.is_none(), "{:?}", run.metrics.error);
            assert_eq!(run.metrics.bytes_transferred, total, "{mode}");
            assert_eq!(flow.metrics.bytes_received, total, "{mode}");
            assert_eq!(
                flow.metrics.digest,
                expected_digest(64 * KIB, 42, total),
                "{mode}"
            );
            let stats = run.boundary.unwrap();
            let sends = run.metrics.transmit_calls;
            assert_eq!(sends, 49);
            // open/ioctl/close sockets plus one crossing pair per send, and
            // open/invoke/close of the session.
            assert_eq!(stats.rpc_count, sends + 3);
            assert_eq!(stats.crossings, 2 * (sends + 3 + 3));
        }
    }
}

#[test]
fn boundary_rejects_chunks_over_the_trusted_heap() {
    let cfg = RunConfig {
        execution: Execution::Boundary,
        chunk_size: 2 * MIB,
        ..RunConfig::default()
    };
    let err = run_client(&cfg, RelayMode::Thread).unwrap_err();
    assert!(err.to_string().contains("TA memory limit"), "{err}");
}

#[test]
fn boundary_run_against_closed_port_reports_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = RunConfig {
        execution: Execution::Boundary,
        ..fixed_bytes(port, 1024, 1024)
    };
    let run = run_client(&cfg, RelayMode::Thread).unwrap();
    let err = run.metrics.error.unwrap();
    assert!(err.to_lowercase().contains("refused"), "{err}");
    assert_eq!(run.metrics.bytes_transferred, 0);
}

#[test]
fn udp_runs_reach_the_server() {
    for execution in [Execution::Direct, Execution::Boundary] {
        let srv = server();
        let cfg = RunConfig {
            protocol: Protocol::Udp,
            execution,
            ..fixed_bytes(srv.udp_addr().unwrap().port(), 20 * 1000, 1000)
        };
        let run = run_client(&cfg, RelayMode::Thread).unwrap();
        assert_eq!(run.metrics.transmit_calls, 20);
        let flow = srv.next_record_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(flow.protocol, Protocol::Udp);
        // Loopback rarely drops, but UDP makes no promise.
        assert!(flow.metrics.bytes_received <= 20_000);
        assert!(flow.metrics.bytes_received > 0);
        assert_eq!(flow.metrics.smoothed_rtt, None);
    }
}

#[test]
fn constant_rate_boundary_run_holds_its_rate() {
    let srv = server();
    let cfg = RunConfig {
        stop: StopCondition::ConstantRate {
            bitrate: 8_000_000,
            duration: 1.0,
        },
        chunk_size: 16 * KIB,
        execution: Execution::Boundary,
        ..fixed_bytes(srv.tcp_addr().port(), 1, 1)
    };
    let run = run_client(&cfg, RelayMode::Thread).unwrap();
    let bps = tzperf::metrics::derive_throughput(&run.metrics).unwrap();
    assert!((bps / 8e6 - 1.0).abs() < 0.05, "{bps}");
    let flow = srv.next_record_timeout(Duration::from_secs(5)).unwrap();
    assert_eq!(flow.metrics.bytes_received, run.metrics.bytes_transferred);
}

fn tzperf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tzperf"))
}

#[test]
fn cli_client_with_local_server_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let out = tzperf()
        .args(["--client", "127.0.0.1", "--port", &port.to_string()])
        .args([
            "--bytes",
            "1M",
            "--exec",
            "boundary",
            "--shared-mem",
            "temporary",
        ])
        .args([
            "--switch-cost",
            "0.0001",
            "--local-server",
            "--json",
            "--csv",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"crossings\""));
    assert!(stdout.contains("\"injected_cost_total\""));
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 2, "{files:?}");
    let report = read_report(&files[1]).unwrap();
    assert_eq!(report.schema, 1);
    assert_eq!(report.role, "client");
    let transfer = report.transfer.unwrap();
    assert_eq!(transfer.bytes_transferred, MIB as u64);
    assert_eq!(report.server[0].metrics.bytes_received, MIB as u64);
    assert_eq!(report.server[0].metrics.digest, transfer.digest);
    assert!(report.boundary.unwrap().crossings > 0);

    // The report alone reproduces the configuration.
    let again = tzperf::cli::parse_args(&report.command_line).unwrap();
    assert_eq!(Some(again.run), report.config);
}

#[test]
fn cli_energy_role_integrates_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, "unix_time,watts\n0,5\n5,5\n10,5\n").unwrap();
    let out = tzperf()
        .arg("--power-trace")
        .arg(&trace)
        .arg("--json")
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: tzperf::report::RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.energy.unwrap().energy, 50.0);
}

#[test]
fn cli_usage_errors_exit_nonzero() {
    let out = tzperf()
        .args(["--client", "h", "--bytes", "1M", "--time", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = tzperf()
        .args(["--server", "--client", "h"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = tzperf().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cli_kv_bench_emits_series() {
    let out = tzperf()
        .args(["--kv", "get", "--kv-no-preload", "--kv-ops", "16", "--json"])
        .args(["--kv-point-budget", "0.01", "--exec", "boundary"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: tzperf::report::RunReport = serde_json::from_slice(&out.stdout).unwrap();
    let series = report.kv.unwrap();
    assert_eq!(series.points.len(), 16);
    assert!(series.points.iter().all(|p| p.found == 0));
}

#[test]
fn unwritable_out_still_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, "0,1\n1,1\n").unwrap();
    let out = tzperf()
        .arg("--power-trace")
        .arg(&trace)
        .arg("--out")
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"schema\": 1"), "{stdout}");
}
