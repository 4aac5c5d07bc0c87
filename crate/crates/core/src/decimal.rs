//! Exact decimal helpers shared by every module.
//!
//! All measure values, widths and offsets are [`Decimal`]s so bucket
//! boundaries are exact. Rendering always strips trailing zeros and never
//! uses exponent notation or thousands separators.

use std::fmt;
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
pub use rust_decimal::Decimal;
use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

/// Canonical text form: "60", "-10", "0.25". Negative zero renders as "0".
pub fn format_decimal(value: Decimal) -> String {
    if value.is_zero() {
        return "0".to_string();
    }
    value.normalize().to_string()
}

/// Parses a plain decimal literal (`-12.50`, `75`). Exponents, separators
/// and surrounding garbage are rejected.
pub fn parse_decimal(text: &str) -> Option<Decimal> {
    let t = text.trim();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit() || b == b'.' || b == b'-' || b == b'+') {
        return None;
    }
    Decimal::from_str(t).ok()
}

/// Number of whole `granularity` steps in `value`, if `value` is an exact
/// multiple that fits in an `i64`.
pub fn to_steps(value: Decimal, granularity: Decimal) -> Option<i64> {
    if granularity <= Decimal::ZERO {
        return None;
    }
    let rem = value.checked_rem(granularity)?;
    if !rem.is_zero() {
        return None;
    }
    value.checked_div(granularity)?.to_i64()
}

/// Smallest step count `s` with `s * granularity >= value`.
pub(crate) fn ceil_steps(value: Decimal, granularity: Decimal) -> Option<i64> {
    let q = value.checked_div(granularity)?;
    let c = q.ceil();
    // guard against quotient rounding at 28 digits
    let mut s = c.to_i64()?;
    while Decimal::from(s - 1) * granularity >= value {
        s -= 1;
    }
    while Decimal::from(s) * granularity < value {
        s += 1;
    }
    Some(s)
}

/// `serde(with = ...)` adapter: decimals travel as canonical strings and are
/// accepted from either JSON strings or JSON numbers.
pub mod serde_str {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Decimal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_decimal(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
        d.deserialize_any(DecimalVisitor)
    }

    struct DecimalVisitor;

    impl Visitor<'_> for DecimalVisitor {
        type Value = Decimal;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a decimal string or number")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
            parse_decimal(v).ok_or_else(|| E::custom(format!("invalid decimal {v:?}")))
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
            Ok(Decimal::from(v))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
            Ok(Decimal::from(v))
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
            if !v.is_finite() {
                return Err(E::custom("non-finite decimal"));
            }
            parse_decimal(&v.to_string()).ok_or_else(|| E::custom(format!("invalid decimal {v}")))
        }
    }
}

/// Same as [`serde_str`] for optional fields.
pub mod serde_str_opt {
    use super::*;
    use serde::Deserialize;

    pub fn serialize<S: Serializer>(value: &Option<Decimal>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_str(&format_decimal(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Decimal>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::serde_str")] Decimal);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
