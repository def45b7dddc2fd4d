//! Byte quantities.
//!
//! All memory amounts are integer bytes. Size suffixes in scenario files are
//! binary: `1GB` is 2^30 bytes.

use std::fmt;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;
pub const TIB: u64 = 1 << 40;

/// Whole gigabytes to bytes.
pub const fn gb(n: u64) -> u64 {
    n * GIB
}

/// Fractional gigabytes to bytes, rounded toward zero.
pub fn gb_f(n: f64) -> u64 {
    (n * GIB as f64) as u64
}

/// Bytes as fractional gigabytes.
pub fn to_gb(bytes: u64) -> f64 {
    bytes as f64 / GIB as f64
}

/// Signed bytes as fractional gigabytes.
pub fn to_gb_signed(bytes: i64) -> f64 {
    bytes as f64 / GIB as f64
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid byte size `{0}`")]
pub struct ParseSizeError(pub String);

/// Parses `"125GB"`, `"256 MiB"`, `"0.5GB"` or a bare byte count.
pub fn parse_size(text: &str) -> Result<u64, ParseSizeError> {
    let s = text.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '_')).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let num: String = num.chars().filter(|c| *c != '_').collect();
    let mult = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "K" | "KB" | "KIB" => KIB,
        "M" | "MB" | "MIB" => MIB,
        "G" | "GB" | "GIB" => GIB,
        "T" | "TB" | "TIB" => TIB,
        _ => return Err(ParseSizeError(text.to_string())),
    };
    if num.is_empty() {
        return Err(ParseSizeError(text.to_string()));
    }
    if let Ok(n) = num.parse::<u64>() {
        return n.checked_mul(mult).ok_or_else(|| ParseSizeError(text.to_string()));
    }
    let f: f64 = num.parse().map_err(|_| ParseSizeError(text.to_string()))?;
    if !f.is_finite() || f < 0.0 {
        return Err(ParseSizeError(text.to_string()));
    }
    Ok((f * mult as f64) as u64)
}

/// Human-readable rendering, used in tables and chart labels.
pub struct Size(pub u64);

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        if b >= GIB {
            write!(f, "{:.2}GB", b as f64 / GIB as f64)
        } else if b >= MIB {
            write!(f, "{:.1}MB", b as f64 / MIB as f64)
        } else {
            write!(f, "{b}B")
        }
    }
}

/// Serde adapter accepting either an integer byte count or a suffixed string.
pub mod serde_size {
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(*v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = u64;
            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a byte count or a size string such as \"125GB\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
                u64::try_from(v).map_err(|_| E::custom("byte size must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
                super::parse_size(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}
