// SPDX-License-Identifier: Apache-2.0

//! Command-line parsing.
//!
//! Bit rates take decimal suffixes (`1M` = 1,000,000 bit/s). Byte counts take
//! binary suffixes (`1M` = 1,048,576 bytes).

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgGroup, Parser, ValueEnum};
use thiserror::Error;

use crate::config::{
    validate_config, Execution, Protocol, RunConfig, ShareMode, StopCondition, DEFAULT_DURATION,
    DEFAULT_PORT,
};
use crate::energy::TraceFormat;
use crate::kvbench::{KvBenchConfig, Workload, DEFAULT_OPS};
use crate::units::{parse_bitrate, parse_size};

/// Chunk size used for UDP when `--length` is not given.
pub const DEFAULT_UDP_LENGTH: usize = 1460;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
    KvBench,
    Energy,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Server => "server",
            Role::KvBench => "kvbench",
            Role::Energy => "energy",
        }
    }
}

/// Where boundary runs execute socket calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RelayChoice {
    /// A supplicant thread inside this process.
    Thread,
    /// A separate supplicant process.
    Process,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerOptions {
    pub trace: PathBuf,
    pub format: TraceFormat,
    /// Seconds added to every trace timestamp.
    pub clock_offset: f64,
    /// Integration window for the energy role; the whole trace when unset.
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerOptions {
    /// Exit after the first completed flow.
    pub one_off: bool,
    pub udp_idle_timeout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub role: Role,
    pub run: RunConfig,
    pub kv: Option<KvBenchConfig>,
    pub power: Option<PowerOptions>,
    pub server: ServerOptions,
    pub relay: RelayChoice,
    /// Start a server in-process and attach its metrics to the client report.
    pub local_server: bool,
    pub out: Option<PathBuf>,
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub message: String,
    /// 0 for `--help` and `--version`.
    pub exit_code: i32,
}

impl CliError {
    fn usage(message: impl Into<String>) -> CliError {
        let mut help = Args::command_for_usage();
        CliError {
            message: format!("error: {}\n\n{}", message.into(), help.render_usage()),
            exit_code: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExecArg {
    Direct,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SharedArg {
    Whole,
    Partial,
    Temporary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PowerFormatArg {
    Pdu,
    Powerspy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KvArg {
    Put,
    Get,
    Del,
    Mix20,
    Mix50,
}

fn bitrate_arg(s: &str) -> Result<u64, String> {
    parse_bitrate(s).map_err(|e| e.to_string())
}

fn size_arg(s: &str) -> Result<u64, String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn usize_size_arg(s: &str) -> Result<usize, String> {
    usize::try_from(size_arg(s)?).map_err(|e| e.to_string())
}

fn window_arg(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| "expected <start>:<end> in Unix seconds".to_string())?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Parser)]
#[command(
    name = "tzperf",
    version,
    about = "Network, shared-memory and energy benchmarks through an emulated TEE boundary",
    group(ArgGroup::new("role").args(["server", "client", "kv"]).multiple(false))
)]
struct Args {
    /// Run as the measuring server.
    #[arg(short = 's', long)]
    server: bool,
    /// Run the traffic client against HOST.
    #[arg(short = 'c', long, value_name = "HOST")]
    client: Option<String>,
    #[arg(short = 'p', long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Target bit rate (k/M/G = 10^3/10^6/10^9); paces the run.
    #[arg(short = 'b', long, value_parser = bitrate_arg)]
    bitrate: Option<u64>,
    /// Bytes to send (K/M/G = 2^10/2^20/2^30).
    #[arg(short = 'n', long, value_parser = size_arg, conflicts_with_all = ["time", "bitrate"])]
    bytes: Option<u64>,
    /// Seconds to run [default: 10].
    #[arg(short = 't', long)]
    time: Option<f64>,
    /// Bytes per send call [default: 128K, or 1460 with --udp].
    #[arg(short = 'l', long, value_parser = usize_size_arg)]
    length: Option<usize>,
    /// Socket buffer size.
    #[arg(short = 'w', long, value_parser = usize_size_arg, default_value = "128K")]
    window: usize,
    #[arg(short = 'u', long)]
    udp: bool,
    #[arg(long = "exec", value_enum, default_value = "direct")]
    exec: ExecArg,
    #[arg(long = "shared-mem", value_enum, default_value = "whole")]
    shared_mem: SharedArg,
    /// Seconds of delay injected per boundary crossing.
    #[arg(long = "switch-cost", default_value_t = 0.0)]
    switch_cost: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the key-value benchmark with this workload.
    #[arg(long, value_enum)]
    kv: Option<KvArg>,
    /// Operations per rate point.
    #[arg(long = "kv-ops", default_value_t = DEFAULT_OPS)]
    kv_ops: usize,
    /// Cap each rate point at this many seconds of operations.
    #[arg(long = "kv-point-budget")]
    kv_point_budget: Option<f64>,
    /// Start GET and DEL workloads from an empty store.
    #[arg(long = "kv-no-preload")]
    kv_no_preload: bool,
    /// Power trace to integrate over the run.
    #[arg(long = "power-trace", value_name = "FILE")]
    power_trace: Option<PathBuf>,
    #[arg(long = "power-format", value_enum, default_value = "pdu")]
    power_format: PowerFormatArg,
    /// Seconds added to trace timestamps to correct meter clock skew.
    #[arg(
        long = "power-offset",
        default_value_t = 0.0,
        allow_negative_numbers = true
    )]
    power_offset: f64,
    /// Integration window <start>:<end> for a trace-only invocation.
    #[arg(long = "power-window", value_parser = window_arg)]
    power_window: Option<(f64, f64)>,
    /// Where boundary runs execute socket calls.
    #[arg(long, value_enum, default_value = "process")]
    relay: RelayChoice,
    /// Start a server in this process and include its metrics.
    #[arg(long = "local-server", requires = "client")]
    local_server: bool,
    /// Server: exit after the first flow.
    #[arg(short = '1', long = "one-off")]
    one_off: bool,
    /// Server: seconds of silence that end a UDP flow.
    #[arg(long = "udp-idle", default_value_t = 2.0)]
    udp_idle: f64,
    /// Directory for report files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write a CSV projection of the report.
    #[arg(long)]
    csv: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

impl Args {
    fn command_for_usage() -> clap::Command {
        <Args as clap::CommandFactory>::command()
    }
}

/// Parses a full argument vector, program name first.
pub fn parse_args<I, T>(argv: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| {
        let exit_code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
            _ => 2,
        };
        CliError {
            message: e.render().to_string(),
            exit_code,
        }
    })?;

    let role = if args.server {
        Role::Server
    } else if args.client.is_some() {
        Role::Client
    } else if args.kv.is_some() {
        Role::KvBench
    } else if args.power_trace.is_some() {
        Role::Energy
    } else {
        return Err(CliError::usage(
            "one of --server, --client, --kv or --power-trace is required",
        ));
    };

    let stop = match (args.bitrate, args.bytes, args.time) {
        (Some(bitrate), None, time) => StopCondition::ConstantRate {
            bitrate,
            duration: time.unwrap_or(DEFAULT_DURATION),
        },
        (None, Some(total_bytes), None) => StopCondition::FixedBytes { total_bytes },
        (None, None, time) => StopCondition::FixedDuration {
            duration: time.unwrap_or(DEFAULT_DURATION),
        },
        _ => return Err(CliError::usage("conflicting stop conditions")),
    };
    let protocol = if args.udp {
        Protocol::Udp
    } else {
        Protocol::Tcp
    };
    let execution = match args.exec {
        ExecArg::Direct => Execution::Direct,
        ExecArg::Boundary => Execution::Boundary,
    };
    let shared_mode = match args.shared_mem {
        SharedArg::Whole => ShareMode::Whole,
        SharedArg::Partial => ShareMode::Partial,
        SharedArg::Temporary => ShareMode::Temporary,
    };
    let default_length = match protocol {
        Protocol::Tcp => RunConfig::default().chunk_size,
        Protocol::Udp => DEFAULT_UDP_LENGTH,
    };
    let run = RunConfig {
        stop,
        chunk_size: args.length.unwrap_or(default_length),
        socket_buffer_size: args.window,
        protocol,
        host: args
            .client
            .clone()
            .unwrap_or_else(|| RunConfig::default().host),
        port: args.port,
        execution,
        shared_mode,
        switch_cost: args.switch_cost,
        seed: args.seed,
    };
    let run = match role {
        Role::Client | Role::Server => {
            validate_config(&run).map_err(|e| CliError::usage(e.to_string()))?
        }
        _ => run,
    };

    let kv = args.kv.map(|w| KvBenchConfig {
        workload: match w {
            KvArg::Put => Workload::Put,
            KvArg::Get => Workload::Get,
            KvArg::Del => Workload::Del,
            KvArg::Mix20 => Workload::Mix20,
            KvArg::Mix50 => Workload::Mix50,
        },
        execution,
        shared_mode,
        ops: args.kv_ops,
        point_budget: args.kv_point_budget,
        preload: !args.kv_no_preload,
        switch_cost: args.switch_cost,
        seed: args.seed,
        ..KvBenchConfig::default()
    });
    if let Some(kv) = &kv {
        if kv.ops == 0 {
            return Err(CliError::usage("--kv-ops must be at least 1"));
        }
        if kv.point_budget.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
            return Err(CliError::usage("--kv-point-budget must be positive"));
        }
        if !(kv.switch_cost.is_finite() && kv.switch_cost >= 0.0) {
            return Err(CliError::usage("--switch-cost must be non-negative"));
        }
    }

    let power = args.power_trace.map(|trace| PowerOptions {
        trace,
        format: match args.power_format {
            PowerFormatArg::Pdu => TraceFormat::PduCsv,
            PowerFormatArg::Powerspy => TraceFormat::PowerSpyCsv,
        },
        clock_offset: args.power_offset,
        window: args.power_window,
    });
    if !(args.udp_idle.is_finite() && args.udp_idle > 0.0) {
        return Err(CliError::usage("--udp-idle must be positive"));
    }

    Ok(Invocation {
        role,
        run,
        kv,
        power,
        server: ServerOptions {
            one_off: args.one_off,
            udp_idle_timeout: args.udp_idle,
        },
        relay: args.relay,
        local_server: args.local_server,
        out: args.out,
        csv: args.csv,
        json: args.json,
    })
}

/// Emits the client arguments that reproduce `cfg`, program name first.
pub fn render(cfg: &RunConfig) -> Vec<String> {
    let mut out = vec!["tzperf".to_string(), "--client".into(), cfg.host.clone()];
    let mut push = |flag: &str, value: String| {
        out.push(flag.to_string());
        out.push(value);
    };
    push("--port", cfg.port.to_string());
    match cfg.stop {
        StopCondition::ConstantRate { bitrate, duration } => {
            push("--bitrate", bitrate.to_string());
            push("--time", duration.to_string());
        }
        StopCondition::FixedBytes { total_bytes } => push("--bytes", total_bytes.to_string()),
        StopCondition::FixedDuration { duration } => push("--time", duration.to_string()),
    }
    push("--length", cfg.chunk_size.to_string());
    push("--window", cfg.socket_buffer_size.to_string());
    push(
        "--exec",
        match cfg.execution {
            Execution::Direct => "direct",
            Execution::Boundary => "boundary",
        }
        .into(),
    );
    push("--shared-mem", cfg.shared_mode.to_string());
    push("--switch-cost", cfg.switch_cost.to_string());
    push("--seed", cfg.seed.to_string());
    if cfg.protocol == Protocol::Udp {
        out.push("--udp".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::KIB;

    fn parse(line: &str) -> Result<Invocation, CliError> {
        parse_args(std::iter::once("tzperf").chain(line.split_whitespace()))
    }

    #[test]
    fn constant_rate() {
        let inv = parse("--client h --bitrate 1M --time 10").unwrap();
        assert_eq!(inv.role, Role::Client);
        assert_eq!(
            inv.run.stop,
            StopCondition::ConstantRate {
                bitrate: 1_000_000,
                duration: 10.0
            }
        );
        assert_eq!(inv.run.host, "h");
    }

    #[test]
    fn server_defaults() {
        let inv = parse("--server").unwrap();
        assert_eq!(inv.role, Role::Server);
        assert_eq!(inv.run.port, 5201);
        assert_eq!(inv.run.chunk_size, 128 * KIB);
        assert_eq!(inv.run.socket_buffer_size, 128 * KIB);
        assert!(!inv.json);
    }

    #[test]
    fn client_defaults() {
        let inv = parse("--client h").unwrap();
        assert_eq!(
            inv.run.stop,
            StopCondition::FixedDuration { duration: 10.0 }
        );
        assert_eq!(inv.run.execution, Execution::Direct);
        assert_eq!(inv.relay, RelayChoice::Process);
    }

    #[test]
    fn conflicting_stop_conditions() {
        let err = parse("--client h --bytes 1M --time 5").unwrap_err();
        assert_eq!(err.exit_code, 2);
        assert!(parse("--client h --bytes 1M --bitrate 1M").is_err());
    }

    #[test]
    fn conflicting_roles() {
        assert!(parse("--server --client h").is_err());
        assert!(parse("--client h --kv put").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn invalid_values() {
        assert!(parse("--client h --bogus").is_err());
        assert!(parse("--client h --bitrate 1X").is_err());
        assert!(parse("--client h --port 0").is_err());
        assert!(parse("--client h --exec boundary --length 2M").is_err());
        assert!(parse("--client h --switch-cost -1").is_err());
        assert_eq!(parse("--help").unwrap_err().exit_code, 0);
    }

    #[test]
    fn unit_suffixes() {
        let inv = parse("--client h --bytes 1M --length 16K").unwrap();
        assert_eq!(
            inv.run.stop,
            StopCondition::FixedBytes {
                total_bytes: 1 << 20
            }
        );
        assert_eq!(inv.run.chunk_size, 16 * KIB);
        let inv = parse("--client h --bitrate 2.5k").unwrap();
        assert!(matches!(
            inv.run.stop,
            StopCondition::ConstantRate { bitrate: 2500, .. }
        ));
    }

    #[test]
    fn udp_length_default() {
        assert_eq!(
            parse("--client h --udp").unwrap().run.chunk_size,
            DEFAULT_UDP_LENGTH
        );
        assert_eq!(
            parse("--client h --udp --length 512")
                .unwrap()
                .run
                .chunk_size,
            512
        );
    }

    #[test]
    fn kv_and_energy_roles() {
        let inv = parse("--kv mix50 --exec boundary --shared-mem temporary --seed 4").unwrap();
        assert_eq!(inv.role, Role::KvBench);
        let kv = inv.kv.unwrap();
        assert_eq!(kv.workload, Workload::Mix50);
        assert_eq!(kv.shared_mode, ShareMode::Temporary);
        assert_eq!(kv.seed, 4);
        let inv = parse("--power-trace t.csv --power-format powerspy --power-window 1:2").unwrap();
        assert_eq!(inv.role, Role::Energy);
        let p = inv.power.unwrap();
        assert_eq!(p.format, TraceFormat::PowerSpyCsv);
        assert_eq!(p.window, Some((1.0, 2.0)));
    }

    #[test]
    fn render_round_trip() {
        let cfg = RunConfig {
            stop: StopCondition::ConstantRate {
                bitrate: 123_456_789,
                duration: 0.1 + 0.2,
            },
            protocol: Protocol::Udp,
            chunk_size: 1000,
            execution: Execution::Boundary,
            shared_mode: ShareMode::Partial,
            switch_cost: 1e-4,
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert_eq!(parse_args(render(&cfg)).unwrap().run, cfg);
    }
}
