// SPDX-License-Identifier: Apache-2.0

//! Power-trace ingestion and trapezoidal energy integration.
//!
//! Two CSV layouts are accepted, one row per sample and an optional header:
//!
//! * `pdu`: `unix_time,watts`
//! * `powerspy`: `unix_time_float,volts,amps,watts`

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Unix time in seconds.
    pub timestamp: f64,
    /// Watts.
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[serde(rename = "pdu")]
    PduCsv,
    #[serde(rename = "powerspy")]
    PowerSpyCsv,
}

impl TraceFormat {
    fn columns(self) -> usize {
        match self {
            TraceFormat::PduCsv => 2,
            TraceFormat::PowerSpyCsv => 4,
        }
    }
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFormat::PduCsv => "pdu",
            TraceFormat::PowerSpyCsv => "powerspy",
        })
    }
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pdu" => Ok(TraceFormat::PduCsv),
            "powerspy" => Ok(TraceFormat::PowerSpyCsv),
            other => Err(format!("unknown power trace format '{other}'")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("trace contains no samples")]
    Empty,
    #[error("trace read failed: {0}")]
    Io(String),
    #[error("window [{t_start}, {t_end}] is not inside the trace span [{first}, {last}]")]
    OutsideSpan {
        t_start: f64,
        t_end: f64,
        first: f64,
        last: f64,
    },
    #[error("window must satisfy t_start < t_end")]
    EmptyWindow,
    #[error("insufficient samples: {0} in window, need at least 2")]
    InsufficientSamples(usize),
}

/// Parses a trace, sorts it by time and averages rows that share a timestamp.
/// `clock_offset` is added to every timestamp to correct meter/host skew.
pub fn ingest_trace(
    reader: impl Read,
    format: TraceFormat,
    clock_offset: f64,
) -> Result<Vec<PowerSample>, EnergyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut raw = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => EnergyError::Malformed {
                line: pos.line(),
                message: e.to_string(),
            },
            None => EnergyError::Io(e.to_string()),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != format.columns() {
            return Err(EnergyError::Malformed {
                line,
                message: format!(
                    "expected {} columns for {format}, found {}",
                    format.columns(),
                    record.len()
                ),
            });
        }
        let t = record[0].parse::<f64>();
        let p = record[format.columns() - 1].parse::<f64>();
        let (t, p) = match (t, p) {
            (Ok(t), Ok(p)) => (t, p),
            // A non-numeric first row is a header.
            _ if raw.is_empty() && idx == 0 && record[0].parse::<f64>().is_err() => continue,
            _ => {
                return Err(EnergyError::Malformed {
                    line,
                    message: "non-numeric field".into(),
                })
            }
        };
        if !t.is_finite() || !p.is_finite() || p < 0.0 {
            return Err(EnergyError::Malformed {
                line,
                message: format!("invalid sample ({t}, {p})"),
            });
        }
        raw.push(PowerSample {
            timestamp: t + clock_offset,
            power: p,
        });
    }
    if raw.is_empty() {
        return Err(EnergyError::Empty);
    }
    raw.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut out: Vec<PowerSample> = Vec::with_capacity(raw.len());
    let mut run = 1.0;
    for s in raw {
        match out.last_mut() {
            Some(last) if last.timestamp == s.timestamp => {
                last.power += (s.power - last.power) / (run + 1.0);
                run += 1.0;
            }
            _ => {
                out.push(s);
                run = 1.0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t_start: f64,
    pub t_end: f64,
    /// Joules.
    pub energy: f64,
    /// Trace samples strictly inside the window.
    pub sample_count: usize,
    /// Watts.
    pub mean_power: f64,
}

fn interpolate(a: &PowerSample, b: &PowerSample, t: f64) -> f64 {
    if b.timestamp == a.timestamp {
        return a.power;
    }
    a.power + (b.power - a.power) * (t - a.timestamp) / (b.timestamp - a.timestamp)
}

/// Trapezoidal energy over `[t_start, t_end]`. The window edges get linearly
/// interpolated samples. `samples` must be sorted, as returned by
/// [`ingest_trace`].
pub fn integrate_energy(
    samples: &[PowerSample],
    t_start: f64,
    t_end: f64,
) -> Result<EnergyReport, EnergyError> {
    if t_start.partial_cmp(&t_end) != Some(std::cmp::Ordering::Less) {
        return Err(EnergyError::EmptyWindow);
    }
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(EnergyError::InsufficientSamples(0)),
    };
    if t_start < first || t_end > last {
        return Err(EnergyError::OutsideSpan {
            t_start,
            t_end,
            first,
            last,
        });
    }
    let covering = samples
        .iter()
        .filter(|s| s.timestamp >= t_start && s.timestamp <= t_end)
        .count();
    if covering < 2 {
        return Err(EnergyError::InsufficientSamples(covering));
    }

    // Index of the last sample at or before t.
    let at_or_before = |t: f64| samples.partition_point(|s| s.timestamp <= t) - 1;
    let edge = |t: f64| {
        let i = at_or_before(t);
        match samples.get(i + 1) {
            Some(next) => interpolate(&samples[i], next, t),
            None => samples[i].power,
        }
    };

    let mut points = Vec::with_capacity(covering + 2);
    points.push(PowerSample {
        timestamp: t_start,
        power: edge(t_start),
    });
    points.extend(
        samples
            .iter()
            .filter(|s| s.timestamp > t_start && s.timestamp < t_end)
            .copied(),
    );
    points.push(PowerSample {
        timestamp: t_end,
        power: edge(t_end),
    });

    let energy: f64 = points
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp) * (w[0].power + w[1].power) / 2.0)
        .sum();
    Ok(EnergyReport {
        t_start,
        t_end,
        energy,
        sample_count: points.len() - 2,
        mean_power: energy / (t_end - t_start),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    /// `b - a` in joules.
    pub delta_joules: f64,
    /// `b / a`; `None` when `a` consumed no energy.
    pub ratio: Option<f64>,
}

pub fn compare_runs(a: &EnergyReport, b: &EnergyReport) -> RunComparison {
    RunComparison {
        delta_joules: b.energy - a.energy,
        ratio: (a.energy != 0.0).then(|| b.energy / a.energy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sampled(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Vec<PowerSample> {
        (0..=n)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / n as f64;
                PowerSample {
                    timestamp: t,
                    power: f(t),
                }
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn constant_power() {
        let s = sampled(|_| 5.0, 0.0, 10.0, 10);
        let r = integrate_energy(&s, 0.0, 10.0).unwrap();
        assert_eq!(r.energy, 50.0);
        assert_eq!(r.mean_power, 5.0);
    }

    #[test]
    fn linear_ramp_is_exact() {
        let s = sampled(|t| t, 0.0, 10.0, 10);
        assert_eq!(integrate_energy(&s, 0.0, 10.0).unwrap().energy, 50.0);
    }

    #[test]
    fn raised_cosine() {
        let s = sampled(|t| 0.5 * (1.0 - (2.0 * PI * t).cos()), 0.0, 1.0, 1000);
        let e = integrate_energy(&s, 0.0, 1.0).unwrap().energy;
        assert!((e - 0.5).abs() <= 1e-5, "{e}");
    }

    #[test]
    fn interpolated_edges() {
        // Ramp sampled at whole seconds, window on half seconds.
        let s = sampled(|t| 2.0 * t, 0.0, 10.0, 10);
        let r = integrate_energy(&s, 2.5, 7.5).unwrap();
        assert!(rel(r.energy, 7.5 * 7.5 - 2.5 * 2.5) < 1e-12);
        assert_eq!(r.sample_count, 5);
    }

    #[test]
    fn additive_over_adjoining_windows() {
        let s = sampled(|t| 3.0 + (t * 1.7).sin(), 0.0, 20.0, 57);
        let ab = integrate_energy(&s, 1.3, 8.9).unwrap().energy;
        let bc = integrate_energy(&s, 8.9, 17.2).unwrap().energy;
        let ac = integrate_energy(&s, 1.3, 17.2).unwrap().energy;
        assert!(rel(ab + bc, ac) < 1e-9);
    }

    #[test]
    fn refinement_invariant() {
        let coarse = sampled(|t| 4.0 + (t * 0.9).cos(), 0.0, 10.0, 10);
        let mut fine = Vec::new();
        for w in coarse.windows(2) {
            for k in 0..7 {
                let t = w[0].timestamp + (w[1].timestamp - w[0].timestamp) * k as f64 / 7.0;
                fine.push(PowerSample {
                    timestamp: t,
                    power: interpolate(&w[0], &w[1], t),
                });
            }
        }
        fine.push(*coarse.last().unwrap());
        let a = integrate_energy(&coarse, 0.4, 9.3).unwrap().energy;
        let b = integrate_energy(&fine, 0.4, 9.3).unwrap().energy;
        assert!(rel(a, b) < 1e-9);
    }

    #[test]
    fn window_errors() {
        let s = sampled(|_| 1.0, 0.0, 10.0, 10);
        assert!(matches!(
            integrate_energy(&s, -1.0, 5.0),
            Err(EnergyError::OutsideSpan { .. })
        ));
        assert_eq!(
            integrate_energy(&s, 3.2, 3.8),
            Err(EnergyError::InsufficientSamples(0))
        );
        assert_eq!(
            integrate_energy(&s, 2.5, 3.5),
            Err(EnergyError::InsufficientSamples(1))
        );
        assert_eq!(
            integrate_energy(&s, 4.0, 4.0),
            Err(EnergyError::EmptyWindow)
        );
    }

    #[test]
    fn ingest_pdu() {
        let csv = "unix_time,watts\n3,7\n1,5\n2,6\n";
        let s = ingest_trace(csv.as_bytes(), TraceFormat::PduCsv, 0.0).unwrap();
        let ts: Vec<f64> = s.iter().map(|p| p.timestamp).collect();
        assert_eq!(ts, [1.0, 2.0, 3.0]);
        assert_eq!(s[0].power, 5.0);
    }

    #[test]
    fn ingest_averages_duplicates() {
        let csv = "1.0,4\n1.0,6\n2.0,1\n";
        let s = ingest_trace(csv.as_bytes(), TraceFormat::PduCsv, 0.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].power, 5.0);
    }

    #[test]
    fn ingest_powerspy_uses_watts_column() {
        let csv = "1600000000.25,230.0,0.1,23.0\n1600000000.75,230.0,0.2,46.0\n";
        let s = ingest_trace(csv.as_bytes(), TraceFormat::PowerSpyCsv, -1_600_000_000.0).unwrap();
        assert_eq!(s[0].timestamp, 0.25);
        assert_eq!(s[1].power, 46.0);
    }

    #[test]
    fn ingest_errors() {
        assert_eq!(
            ingest_trace("".as_bytes(), TraceFormat::PduCsv, 0.0),
            Err(EnergyError::Empty)
        );
        let err = ingest_trace("1,2\n2,x\n".as_bytes(), TraceFormat::PduCsv, 0.0).unwrap_err();
        assert!(
            matches!(err, EnergyError::Malformed { line: 2, .. }),
            "{err:?}"
        );
        let err = ingest_trace("1,2\n2,3,4\n".as_bytes(), TraceFormat::PduCsv, 0.0).unwrap_err();
        assert!(
            matches!(err, EnergyError::Malformed { line: 2, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn comparisons() {
        let rep = |e| EnergyReport {
            t_start: 0.0,
            t_end: 1.0,
            energy: e,
            sample_count: 2,
            mean_power: e,
        };
        let same = compare_runs(&rep(50.0), &rep(50.0));
        assert_eq!((same.delta_joules, same.ratio), (0.0, Some(1.0)));
        let c = compare_runs(&rep(18.0), &rep(20.0));
        assert_eq!(c.delta_joules, 2.0);
        assert!((c.ratio.unwrap() - 1.111).abs() < 1e-3);
        assert_eq!(compare_runs(&rep(0.0), &rep(5.0)).ratio, None);
    }
}
