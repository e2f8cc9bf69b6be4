// SPDX-License-Identifier: Apache-2.0

//! Runs a parsed [`Invocation`] and produces its reports.

use std::fs::File;
use std::io::BufReader;
use std::time::Duration;

use log::warn;
use thiserror::Error;

use crate::boundary::RelayMode;
use crate::cli::{Invocation, PowerOptions, Role};
use crate::client::{run_client, ClientError};
use crate::config::Protocol;
use crate::energy::{ingest_trace, integrate_energy, EnergyError, EnergyReport};
use crate::kvbench::{run_kv_bench, KvBenchError};
use crate::metrics::{derive_throughput, transmit_throughput};
use crate::report::{emit_report, RunReport};
use crate::server::{serve, FlowRecord, ServerConfig, ServerHandle};
use crate::timing::unix_now;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    KvBench(#[from] KvBenchError),
    #[error("power trace {path}: {source}")]
    Energy { path: String, source: EnergyError },
    #[error("server: {0}")]
    Server(std::io::Error),
}

fn energy_for(power: &PowerOptions, window: Option<(f64, f64)>) -> Result<EnergyReport, RunError> {
    let path = power.trace.display().to_string();
    let err = |source| RunError::Energy {
        path: path.clone(),
        source,
    };
    let file = File::open(&power.trace).map_err(|e| err(EnergyError::Io(e.to_string())))?;
    let samples =
        ingest_trace(BufReader::new(file), power.format, power.clock_offset).map_err(err)?;
    let (t0, t1) = window
        .or(power.window)
        .unwrap_or((samples[0].timestamp, samples[samples.len() - 1].timestamp));
    integrate_energy(&samples, t0, t1).map_err(err)
}

fn server_config(inv: &Invocation) -> ServerConfig {
    ServerConfig {
        host: if inv.role == Role::Server {
            "0.0.0.0".into()
        } else {
            inv.run.host.clone()
        },
        port: inv.run.port,
        buffer_size: inv.run.chunk_size.max(crate::units::DEFAULT_BUFFER),
        socket_buffer_size: inv.run.socket_buffer_size,
        udp_idle_timeout: Duration::from_secs_f64(inv.server.udp_idle_timeout),
        ..ServerConfig::default()
    }
}

/// Waits for the flow the co-located client just finished.
fn collect_local(server: ServerHandle, protocol: Protocol, idle: f64) -> Option<FlowRecord> {
    let wait = match protocol {
        Protocol::Tcp => Duration::from_secs(10),
        Protocol::Udp => Duration::from_secs_f64(idle + 1.0),
    };
    let record = server.next_record_timeout(wait);
    server.shutdown();
    record
}

/// Runs the client role and returns its report.
pub fn run_client_role(inv: &Invocation, relay: RelayMode) -> Result<RunReport, RunError> {
    let server = if inv.local_server {
        Some(serve(&server_config(inv)).map_err(RunError::Server)?)
    } else {
        None
    };
    let run = run_client(&inv.run, relay)?;
    let mut report = RunReport::new("client", run.started_unix, run.finished_unix);
    report.command_line = crate::cli::render(&inv.run);
    report.config = Some(inv.run.clone());
    report.throughput = derive_throughput(&run.metrics).ok();
    report.transmit_throughput = transmit_throughput(&run.metrics).ok();
    report.error = run.metrics.error.clone();
    report.transfer = Some(run.metrics);
    report.boundary = run.boundary;
    if let Some(server) = server {
        report.server.extend(collect_local(
            server,
            inv.run.protocol,
            inv.server.udp_idle_timeout,
        ));
    }
    if let Some(power) = &inv.power {
        report.energy = Some(energy_for(
            power,
            Some((run.started_unix, run.finished_unix)),
        )?);
    }
    Ok(report)
}

pub fn run_kv_role(inv: &Invocation) -> Result<RunReport, RunError> {
    let kv = inv.kv.as_ref().expect("kv role carries a config");
    let started = unix_now();
    let series = run_kv_bench(kv)?;
    let mut report = RunReport::new("kvbench", started, unix_now());
    report.kv_config = Some(kv.clone());
    report.kv = Some(series);
    if let Some(power) = &inv.power {
        report.energy = Some(energy_for(
            power,
            Some((report.started_unix, report.finished_unix)),
        )?);
    }
    Ok(report)
}

pub fn run_energy_role(inv: &Invocation) -> Result<RunReport, RunError> {
    let power = inv.power.as_ref().expect("energy role carries a trace");
    let energy = energy_for(power, None)?;
    let mut report = RunReport::new("energy", energy.t_start, energy.t_end);
    report.energy = Some(energy);
    Ok(report)
}

/// Human-readable summary lines.
pub fn summarize(report: &RunReport) -> Vec<String> {
    let mut lines = Vec::new();
    if let Some(t) = &report.transfer {
        lines.push(format!(
            "sent {} bytes in {} calls over {:.3} s ({:.3} s in transmit)",
            t.bytes_transferred, t.transmit_calls, t.total_runtime, t.time_in_transmit
        ));
    }
    if let Some(bps) = report.throughput {
        lines.push(format!("throughput {:.3} Mbit/s", bps / 1e6));
    }
    if let Some(b) = &report.boundary {
        lines.push(format!(
            "boundary: {} crossings, {:.6} s injected, {} relayed calls, {} bytes copied",
            b.crossings, b.injected_cost_total, b.rpc_count, b.bytes_copied
        ));
    }
    for flow in &report.server {
        let m = &flow.metrics;
        let rtt = m
            .smoothed_rtt
            .map_or("unavailable".to_string(), |r| format!("{:.6} s", r));
        let mss = m
            .max_segment_size
            .map_or("unavailable".to_string(), |v| format!("{v} B"));
        lines.push(format!(
            "server {:?} {}: {} bytes in {} reads over {:.3} s, srtt {rtt}, mss {mss}",
            flow.protocol, flow.peer, m.bytes_received, m.receive_calls, m.runtime
        ));
    }
    if let Some(kv) = &report.kv {
        lines.push(format!(
            "kv {} ({:?}, {}): target ops/s, achieved ops/s, mean/p50/p95/p99 us",
            kv.workload, kv.execution, kv.shared_mode
        ));
        for p in &kv.points {
            let l = &p.latency;
            lines.push(format!(
                "  {:>8} {:>10.1} {:>9.2} {:>9.2} {:>9.2} {:>9.2}{}",
                p.target_rate,
                p.achieved_rate,
                l.mean * 1e6,
                l.p50 * 1e6,
                l.p95 * 1e6,
                l.p99 * 1e6,
                if p.underrun { " underrun" } else { "" }
            ));
        }
    }
    if let Some(e) = &report.energy {
        lines.push(format!(
            "energy {:.3} J over [{:.3}, {:.3}] ({} samples, mean {:.3} W)",
            e.energy, e.t_start, e.t_end, e.sample_count, e.mean_power
        ));
    }
    if let Some(err) = &report.error {
        lines.push(format!("error: {err}"));
    }
    lines
}

/// Prints and persists a finished report. Returns false if it could not be
/// written to disk.
pub fn publish(report: &RunReport, inv: &Invocation) -> bool {
    if inv.json {
        println!("{}", report.to_json());
    } else {
        for line in summarize(report) {
            println!("{line}");
        }
    }
    match &inv.out {
        Some(dir) => match emit_report(report, dir, inv.csv) {
            Ok(paths) => {
                for p in paths {
                    eprintln!("wrote {}", p.display());
                }
                true
            }
            Err(e) => {
                warn!("{e}");
                eprintln!("{e}");
                false
            }
        },
        None => true,
    }
}

/// Serves until interrupted, or until the first flow with `--one-off`.
pub fn run_server_role(inv: &Invocation) -> Result<bool, RunError> {
    let server = serve(&server_config(inv)).map_err(RunError::Server)?;
    eprintln!(
        "listening on tcp {} and udp {}",
        server.tcp_addr(),
        server.udp_addr().map_or("-".to_string(), |a| a.to_string())
    );
    let mut ok = true;
    while let Some(flow) = server.next_record() {
        let finished = flow.started_unix + flow.metrics.runtime;
        let mut report = RunReport::new("server", flow.started_unix, finished);
        report.error = flow.metrics.error.clone();
        report.server.push(flow);
        ok &= publish(&report, inv);
        if inv.server.one_off {
            break;
        }
    }
    server.shutdown();
    Ok(ok)
}

/// Runs `inv`; returns the process exit code.
pub fn execute(inv: &Invocation, relay: RelayMode) -> i32 {
    let outcome = match inv.role {
        Role::Server => run_server_role(inv).map(|ok| (None, ok)),
        Role::Client => run_client_role(inv, relay).map(|r| (Some(r), true)),
        Role::KvBench => run_kv_role(inv).map(|r| (Some(r), true)),
        Role::Energy => run_energy_role(inv).map(|r| (Some(r), true)),
    };
    match outcome {
        Ok((Some(report), _)) => {
            let written = publish(&report, inv);
            if report.error.is_some() || !written {
                1
            } else {
                0
            }
        }
        Ok((None, ok)) => i32::from(!ok),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
