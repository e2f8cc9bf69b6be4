// SPDX-License-Identifier: Apache-2.0

//! Run configuration shared by the client, the boundary and the CLI.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::units::{DEFAULT_BUFFER, TA_MEMORY_LIMIT};

pub const DEFAULT_PORT: u16 = 5201;
pub const DEFAULT_DURATION: f64 = 10.0;

/// Largest payload a single UDP datagram can carry over IPv4.
pub const MAX_UDP_PAYLOAD: usize = 65_507;

/// When a measurement stops. Each variant carries only the fields it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StopCondition {
    /// Paced at `bitrate` bit/s for `duration` seconds.
    ConstantRate {
        bitrate: u64,
        duration: f64,
    },
    FixedBytes {
        total_bytes: u64,
    },
    FixedDuration {
        duration: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Traffic client runs natively in the caller's process.
    Direct,
    /// Traffic client runs as a trusted app behind the emulated boundary.
    Boundary,
}

/// How a shared-memory region is exposed to the trusted side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    Whole,
    Partial,
    Temporary,
}

impl fmt::Display for ShareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShareMode::Whole => "whole",
            ShareMode::Partial => "partial",
            ShareMode::Temporary => "temporary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub stop: StopCondition,
    /// Bytes written per transmit call.
    pub chunk_size: usize,
    /// Requested SO_SNDBUF / SO_RCVBUF.
    pub socket_buffer_size: usize,
    pub protocol: Protocol,
    pub host: String,
    pub port: u16,
    pub execution: Execution,
    pub shared_mode: ShareMode,
    /// Seconds of delay injected at every boundary crossing.
    pub switch_cost: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stop: StopCondition::FixedDuration {
                duration: DEFAULT_DURATION,
            },
            chunk_size: DEFAULT_BUFFER,
            socket_buffer_size: DEFAULT_BUFFER,
            protocol: Protocol::Tcp,
            host: "127.0.0.1".to_string(),
            port: DEFAULT_PORT,
            execution: Execution::Direct,
            shared_mode: ShareMode::Whole,
            switch_cost: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

/// Every invariant a [`RunConfig`] violated, in field order.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError(pub Vec<Violation>);

impl ConfigError {
    pub fn fields(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.0.iter().map(|v| v.field)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

fn check_duration(duration: f64, out: &mut Vec<Violation>) {
    if !(duration.is_finite() && duration > 0.0) {
        out.push(Violation {
            field: "duration",
            message: format!("must be a positive number of seconds, got {duration}"),
        });
    }
}

/// Checks every invariant and returns the normalized config, or the complete
/// list of violations. Validating an already validated config is a no-op.
pub fn validate_config(config: &RunConfig) -> Result<RunConfig, ConfigError> {
    let mut out = Vec::new();
    let mut cfg = config.clone();
    cfg.host = cfg.host.trim().to_string();

    match cfg.stop {
        StopCondition::ConstantRate { bitrate, duration } => {
            if bitrate == 0 {
                out.push(Violation {
                    field: "bitrate",
                    message: "must be positive".into(),
                });
            }
            check_duration(duration, &mut out);
        }
        StopCondition::FixedBytes { total_bytes } => {
            if total_bytes == 0 {
                out.push(Violation {
                    field: "total_bytes",
                    message: "must be positive".into(),
                });
            }
        }
        StopCondition::FixedDuration { duration } => check_duration(duration, &mut out),
    }

    if cfg.chunk_size == 0 {
        out.push(Violation {
            field: "chunk_size",
            message: "must be at least 1 byte".into(),
        });
    } else if cfg.execution == Execution::Boundary && cfg.chunk_size > TA_MEMORY_LIMIT {
        out.push(Violation {
            field: "chunk_size",
            message: format!(
                "{} bytes exceeds the TA memory limit of {} bytes",
                cfg.chunk_size, TA_MEMORY_LIMIT
            ),
        });
    } else if cfg.protocol == Protocol::Udp && cfg.chunk_size > MAX_UDP_PAYLOAD {
        out.push(Violation {
            field: "chunk_size",
            message: format!(
                "{} bytes does not fit in one UDP datagram (max {MAX_UDP_PAYLOAD})",
                cfg.chunk_size
            ),
        });
    }
    if cfg.socket_buffer_size == 0 {
        out.push(Violation {
            field: "socket_buffer_size",
            message: "must be at least 1 byte".into(),
        });
    }
    if cfg.host.is_empty() {
        out.push(Violation {
            field: "host",
            message: "must not be empty".into(),
        });
    }
    if cfg.port == 0 {
        out.push(Violation {
            field: "port",
            message: "must be in 1..=65535".into(),
        });
    }
    if !(cfg.switch_cost.is_finite() && cfg.switch_cost >= 0.0) {
        out.push(Violation {
            field: "switch_cost",
            message: format!(
                "must be a non-negative number of seconds, got {}",
                cfg.switch_cost
            ),
        });
    }

    if out.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError(out))
    }
}
