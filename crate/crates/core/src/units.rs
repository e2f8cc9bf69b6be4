// SPDX-License-Identifier: Apache-2.0

//! Unit helpers.
//!
//! Bit rates are decimal (`1M` = 10^6 bit/s) while buffer and byte counts are
//! binary (`1M` = 2^20 bytes). Mixing the two up is the classic iperf mistake,
//! so every parser here is explicit about which convention it applies.

use thiserror::Error;

pub const KIB: usize = 1024;
pub const MIB: usize = 1024 * KIB;

/// Default dummy buffer and socket buffer size.
pub const DEFAULT_BUFFER: usize = 128 * KIB;

/// Heap available to trusted-side code.
pub const TA_MEMORY_LIMIT: usize = MIB;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UnitError {
    #[error("empty value")]
    Empty,
    #[error("invalid number `{0}`")]
    Invalid(String),
    #[error("unknown suffix `{0}`")]
    Suffix(char),
    #[error("value `{0}` overflows")]
    Overflow(String),
}

fn split_suffix(s: &str) -> Result<(&str, Option<char>), UnitError> {
    let s = s.trim();
    let last = s.chars().last().ok_or(UnitError::Empty)?;
    if last.is_ascii_alphabetic() {
        Ok((&s[..s.len() - 1], Some(last)))
    } else {
        Ok((s, None))
    }
}

fn scaled(digits: &str, factor: u64, raw: &str) -> Result<u64, UnitError> {
    if digits.is_empty() {
        return Err(UnitError::Invalid(raw.to_string()));
    }
    if let Ok(n) = digits.parse::<u64>() {
        return n
            .checked_mul(factor)
            .ok_or_else(|| UnitError::Overflow(raw.to_string()));
    }
    let x: f64 = digits
        .parse()
        .map_err(|_| UnitError::Invalid(raw.to_string()))?;
    if !x.is_finite() || x < 0.0 {
        return Err(UnitError::Invalid(raw.to_string()));
    }
    let v = (x * factor as f64).round();
    if v > u64::MAX as f64 {
        return Err(UnitError::Overflow(raw.to_string()));
    }
    Ok(v as u64)
}

/// Parses a bit rate with an optional decimal suffix (`k`, `M`, `G`).
pub fn parse_bitrate(s: &str) -> Result<u64, UnitError> {
    let (digits, suffix) = split_suffix(s)?;
    let factor = match suffix {
        None => 1,
        Some('k' | 'K') => 1_000,
        Some('m' | 'M') => 1_000_000,
        Some('g' | 'G') => 1_000_000_000,
        Some(c) => return Err(UnitError::Suffix(c)),
    };
    scaled(digits, factor, s)
}

/// Parses a byte count with an optional binary suffix (`K`, `M`, `G`).
pub fn parse_size(s: &str) -> Result<u64, UnitError> {
    let (digits, suffix) = split_suffix(s)?;
    let factor = match suffix {
        None => 1,
        Some('k' | 'K') => 1 << 10,
        Some('m' | 'M') => 1 << 20,
        Some('g' | 'G') => 1 << 30,
        Some(c) => return Err(UnitError::Suffix(c)),
    };
    scaled(digits, factor, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitrate_suffixes_are_decimal() {
        assert_eq!(parse_bitrate("1M"), Ok(1_000_000));
        assert_eq!(parse_bitrate("512k"), Ok(512_000));
        assert_eq!(parse_bitrate("2G"), Ok(2_000_000_000));
        assert_eq!(parse_bitrate("1.5M"), Ok(1_500_000));
        assert_eq!(parse_bitrate("1234"), Ok(1234));
    }

    #[test]
    fn size_suffixes_are_binary() {
        assert_eq!(parse_size("1M"), Ok(1_048_576));
        assert_eq!(parse_size("128K"), Ok(131_072));
        assert_eq!(parse_size("10"), Ok(10));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_size("").is_err());
        assert!(parse_size("M").is_err());
        assert_eq!(parse_size("3X"), Err(UnitError::Suffix('X')));
        assert!(parse_bitrate("-1").is_err());
        assert!(matches!(
            parse_size("99999999999999G"),
            Err(UnitError::Overflow(_))
        ));
    }
}
