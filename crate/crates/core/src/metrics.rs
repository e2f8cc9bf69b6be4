// SPDX-License-Identifier: Apache-2.0

//! Measurement records produced by the traffic client and the server.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What the traffic client observed during one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferMetrics {
    /// Number of send calls issued.
    pub transmit_calls: u64,
    pub bytes_transferred: u64,
    /// Wall time spent inside send calls, seconds.
    pub time_in_transmit: f64,
    /// Length of the measurement window, seconds.
    pub total_runtime: f64,
    /// Chunks sent per pacing deadline (1 unless the pacing interval is below 1 ms).
    pub batch_factor: u32,
    /// Pacing deadlines missed by more than one full interval.
    pub late_deadlines: u64,
    /// The target bit rate could not be sustained.
    pub underrun: bool,
    /// CRC-32 of every payload byte accepted by the transport, in order.
    pub digest: u32,
    /// Set when the transport failed mid-run; the counters above are partial.
    pub error: Option<String>,
}

/// What the server observed for one TCP connection or UDP flow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerMetrics {
    pub bytes_received: u64,
    pub receive_calls: u64,
    /// First to last received byte, seconds.
    pub runtime: f64,
    /// Kernel smoothed RTT at flow end, seconds. `None` when unavailable.
    pub smoothed_rtt: Option<f64>,
    /// `None` when unavailable.
    pub max_segment_size: Option<u32>,
    /// Smoothed RTT sampled once per second while the flow was live.
    #[serde(default)]
    pub rtt_samples: Vec<f64>,
    pub digest: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("runtime is zero; throughput is undefined")]
    ZeroRuntime,
}

fn rate(bytes: u64, seconds: f64) -> Result<f64, MetricsError> {
    if seconds > 0.0 {
        Ok(bytes as f64 * 8.0 / seconds)
    } else {
        Err(MetricsError::ZeroRuntime)
    }
}

/// Throughput in bit/s over the whole measurement window.
pub fn derive_throughput(m: &TransferMetrics) -> Result<f64, MetricsError> {
    rate(m.bytes_transferred, m.total_runtime)
}

/// Throughput in bit/s counting only the time spent inside send calls.
pub fn transmit_throughput(m: &TransferMetrics) -> Result<f64, MetricsError> {
    rate(m.bytes_transferred, m.time_in_transmit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(bytes: u64, runtime: f64) -> TransferMetrics {
        TransferMetrics {
            bytes_transferred: bytes,
            total_runtime: runtime,
            ..Default::default()
        }
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(derive_throughput(&metrics(0, 10.0)), Ok(0.0));
        assert_eq!(
            derive_throughput(&metrics(10_485_760, 10.0)),
            Ok(8_388_608.0)
        );
        let paced = derive_throughput(&metrics(1_310_720, 1.048576)).unwrap();
        assert!(
            (paced - 10_000_000.0).abs() / 10_000_000.0 < 1e-12,
            "{paced}"
        );
    }

    #[test]
    fn zero_runtime_is_an_error() {
        assert_eq!(
            derive_throughput(&metrics(100, 0.0)),
            Err(MetricsError::ZeroRuntime)
        );
        assert_eq!(
            transmit_throughput(&metrics(100, 1.0)),
            Err(MetricsError::ZeroRuntime)
        );
    }

    #[test]
    fn doubling_bytes_doubles_throughput() {
        for (bytes, runtime) in [(1u64, 0.3), (12_345, 7.77), (1 << 40, 1e-3)] {
            let one = derive_throughput(&metrics(bytes, runtime)).unwrap();
            let two = derive_throughput(&metrics(bytes * 2, runtime)).unwrap();
            assert_eq!(two, one * 2.0);
        }
    }
}
