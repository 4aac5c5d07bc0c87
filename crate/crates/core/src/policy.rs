//! Bucketization mathematics and measure policy validation.
//!
//! Everything here is a pure function of its inputs. Buckets are
//! grid-aligned half-open intervals `[offset + k*width, offset + (k+1)*width)`;
//! a width of zero means exact disclosure.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::decimal::{format_decimal, serde_str, to_steps, Decimal};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid range spec: {0}")]
    InvalidSpec(String),
    #[error("unknown privilege level {0:?}")]
    UnknownPrivilege(String),
}

/// Ordered clearance ladder. Comparisons follow the ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivilegeLevel {
    Low = 0,
    MediumLow = 1,
    Medium = 2,
    MediumHigh = 3,
    High = 4,
}

impl PrivilegeLevel {
    pub const ALL: [PrivilegeLevel; 5] = [
        PrivilegeLevel::Low,
        PrivilegeLevel::MediumLow,
        PrivilegeLevel::Medium,
        PrivilegeLevel::MediumHigh,
        PrivilegeLevel::High,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        Self::ALL.get(ordinal as usize).copied()
    }

    /// Snake-case identifier used in JSON documents.
    pub fn as_str(self) -> &'static str {
        match self {
            PrivilegeLevel::Low => "low",
            PrivilegeLevel::MediumLow => "medium_low",
            PrivilegeLevel::Medium => "medium",
            PrivilegeLevel::MediumHigh => "medium_high",
            PrivilegeLevel::High => "high",
        }
    }

    /// Display label, e.g. "Medium-Low".
    pub fn label(self) -> &'static str {
        match self {
            PrivilegeLevel::Low => "Low",
            PrivilegeLevel::MediumLow => "Medium-Low",
            PrivilegeLevel::Medium => "Medium",
            PrivilegeLevel::MediumHigh => "Medium-High",
            PrivilegeLevel::High => "High",
        }
    }
}

impl fmt::Display for PrivilegeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PrivilegeLevel {
    type Err = PolicyError;

    /// Accepts `medium_low`, `Medium-Low`, `MediumLow` and `medium low`
    /// (case-insensitive). Nothing else parses.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).flat_map(char::to_lowercase).collect();
        match folded.as_str() {
            "low" => Ok(PrivilegeLevel::Low),
            "mediumlow" => Ok(PrivilegeLevel::MediumLow),
            "medium" => Ok(PrivilegeLevel::Medium),
            "mediumhigh" => Ok(PrivilegeLevel::MediumHigh),
            "high" => Ok(PrivilegeLevel::High),
            _ => Err(PolicyError::UnknownPrivilege(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    Fixed(#[serde(with = "serde_str")] Decimal),
    UserSeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSpec {
    #[serde(with = "serde_str")]
    pub width: Decimal,
    pub offset_mode: OffsetMode,
}

impl RangeSpec {
    pub fn fixed(width: Decimal, offset: Decimal) -> Self {
        RangeSpec { width, offset_mode: OffsetMode::Fixed(offset) }
    }

    pub fn seeded(width: Decimal) -> Self {
        RangeSpec { width, offset_mode: OffsetMode::UserSeeded }
    }

    pub fn exact() -> Self {
        RangeSpec::fixed(Decimal::ZERO, Decimal::ZERO)
    }
}

/// Per-measure range rules, one [`RangeSpec`] per privilege level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurePolicy {
    pub measure_id: String,
    pub unit: String,
    #[serde(with = "serde_str")]
    pub granularity: Decimal,
    pub per_privilege: BTreeMap<PrivilegeLevel, RangeSpec>,
}

impl MeasurePolicy {
    pub fn spec_for(&self, level: PrivilegeLevel) -> Option<&RangeSpec> {
        self.per_privilege.get(&level)
    }
}

/// Governance knobs for [`validate_policy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRules {
    /// Lowest privilege allowed to receive exact (width 0) values.
    pub exact_floor: PrivilegeLevel,
}

impl Default for PolicyRules {
    fn default() -> Self {
        PolicyRules { exact_floor: PrivilegeLevel::High }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingLevel { level: PrivilegeLevel },
    NonPositiveGranularity,
    NegativeWidth { level: PrivilegeLevel },
    OffsetOutOfRange { level: PrivilegeLevel },
    SeededExactSpec { level: PrivilegeLevel },
    OffGranularity { level: PrivilegeLevel },
    NotMonotone { lower: PrivilegeLevel, higher: PrivilegeLevel },
    ExactBelowFloor { level: PrivilegeLevel, floor: PrivilegeLevel },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingLevel { level } => write!(f, "no range spec for {level}"),
            Violation::NonPositiveGranularity => f.write_str("granularity must be positive"),
            Violation::NegativeWidth { level } => write!(f, "negative width at {level}"),
            Violation::OffsetOutOfRange { level } => {
                write!(f, "offset at {level} must satisfy 0 <= offset < width")
            }
            Violation::SeededExactSpec { level } => {
                write!(f, "user-seeded offset with zero width at {level}")
            }
            Violation::OffGranularity { level } => {
                write!(f, "width or offset at {level} is not a multiple of the granularity")
            }
            Violation::NotMonotone { lower, higher } => {
                write!(f, "{} narrower than {}", compact(*lower), compact(*higher))
            }
            Violation::ExactBelowFloor { level, floor } => {
                write!(f, "exact disclosure below floor at {level} (floor {floor})")
            }
        }
    }
}

fn compact(level: PrivilegeLevel) -> String {
    level.label().replace('-', "")
}

/// Checks every [`MeasurePolicy`] invariant. An empty list means the policy
/// is valid; violations are data, not failures.
pub fn validate_policy(policy: &MeasurePolicy, rules: &PolicyRules) -> Vec<Violation> {
    let mut out = Vec::new();
    let granularity_ok = policy.granularity > Decimal::ZERO;
    if !granularity_ok {
        out.push(Violation::NonPositiveGranularity);
    }
    for level in PrivilegeLevel::ALL {
        let Some(spec) = policy.per_privilege.get(&level) else {
            out.push(Violation::MissingLevel { level });
            continue;
        };
        let width = spec.width;
        if width < Decimal::ZERO {
            out.push(Violation::NegativeWidth { level });
            continue;
        }
        match spec.offset_mode {
            OffsetMode::Fixed(offset) => {
                let in_range =
                    if width.is_zero() { offset.is_zero() } else { offset >= Decimal::ZERO && offset < width };
                if !in_range {
                    out.push(Violation::OffsetOutOfRange { level });
                }
                if granularity_ok
                    && (to_steps(width, policy.granularity).is_none() || to_steps(offset, policy.granularity).is_none())
                {
                    out.push(Violation::OffGranularity { level });
                }
            }
            OffsetMode::UserSeeded => {
                if width.is_zero() {
                    out.push(Violation::SeededExactSpec { level });
                }
                if granularity_ok && to_steps(width, policy.granularity).is_none() {
                    out.push(Violation::OffGranularity { level });
                }
            }
        }
        if width.is_zero() && level < rules.exact_floor {
            out.push(Violation::ExactBelowFloor { level, floor: rules.exact_floor });
        }
    }
    for (i, lower) in PrivilegeLevel::ALL.iter().enumerate() {
        for higher in &PrivilegeLevel::ALL[i + 1..] {
            if let (Some(a), Some(b)) = (policy.per_privilege.get(lower), policy.per_privilege.get(higher)) {
                if a.width < b.width {
                    out.push(Violation::NotMonotone { lower: *lower, higher: *higher });
                }
            }
        }
    }
    out
}

/// A concrete grid: bucket width and offset, with `0 <= offset < width`
/// (or both zero for exact disclosure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    #[serde(with = "serde_str")]
    pub width: Decimal,
    #[serde(with = "serde_str")]
    pub offset: Decimal,
}

impl Grid {
    pub fn new(width: Decimal, offset: Decimal) -> Result<Self, PolicyError> {
        let grid = Grid { width, offset };
        grid.check()?;
        Ok(grid)
    }

    pub fn exact() -> Self {
        Grid { width: Decimal::ZERO, offset: Decimal::ZERO }
    }

    pub fn is_exact(&self) -> bool {
        self.width.is_zero()
    }

    fn check(&self) -> Result<(), PolicyError> {
        if self.width < Decimal::ZERO {
            return Err(PolicyError::InvalidSpec("negative width".into()));
        }
        if self.width.is_zero() {
            if !self.offset.is_zero() {
                return Err(PolicyError::InvalidSpec("offset must be 0 when width is 0".into()));
            }
        } else if self.offset < Decimal::ZERO || self.offset >= self.width {
            return Err(PolicyError::InvalidSpec(format!(
                "offset {} outside [0, {})",
                format_decimal(self.offset),
                format_decimal(self.width)
            )));
        }
        Ok(())
    }
}

/// A range of a measure: `[lo, hi)` when `hi > lo`, the single point `lo`
/// when `hi == lo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bucket {
    pub lo: Decimal,
    pub hi: Decimal,
}

impl Bucket {
    pub fn point(value: Decimal) -> Self {
        Bucket { lo: value, hi: value }
    }

    pub fn width(&self) -> Decimal {
        self.hi - self.lo
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, value: Decimal) -> bool {
        if self.is_exact() {
            value == self.lo
        } else {
            self.lo <= value && value < self.hi
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_bucket(self))
    }
}

/// Maps `value` to the grid cell containing it.
///
/// `lo = offset + floor((value - offset) / width) * width`, computed with an
/// exact remainder rather than a rounded quotient.
pub fn bucket_for(value: Decimal, grid: Grid) -> Result<Bucket, PolicyError> {
    grid.check()?;
    if grid.is_exact() {
        return Ok(Bucket::point(value));
    }
    let overflow = || PolicyError::InvalidValue(format!("{} overflows", format_decimal(value)));
    let shifted = value.checked_sub(grid.offset).ok_or_else(overflow)?;
    let mut rem = shifted.checked_rem(grid.width).ok_or_else(overflow)?;
    if rem < Decimal::ZERO {
        rem += grid.width;
    }
    let lo = value.checked_sub(rem).ok_or_else(overflow)?;
    let hi = lo.checked_add(grid.width).ok_or_else(overflow)?;
    Ok(Bucket { lo, hi })
}

/// Converts a binary float into a decimal measure value; NaN and infinities
/// are rejected.
pub fn value_from_f64(value: f64) -> Result<Decimal, PolicyError> {
    if !value.is_finite() {
        return Err(PolicyError::InvalidValue(value.to_string()));
    }
    crate::decimal::parse_decimal(&value.to_string()).ok_or_else(|| PolicyError::InvalidValue(value.to_string()))
}

/// "60-90" for a range, "75" for an exact value.
pub fn format_bucket(bucket: &Bucket) -> String {
    if bucket.is_exact() {
        format_decimal(bucket.lo)
    } else {
        format!("{}-{}", format_decimal(bucket.lo), format_decimal(bucket.hi))
    }
}

/// Inputs to the per-user offset hash.
#[derive(Debug, Clone, Copy)]
pub struct SeedInput<'a> {
    pub user_id: &'a str,
    pub role_id: &'a str,
    pub privilege: PrivilegeLevel,
    pub measure_id: &'a str,
    pub salt: &'a [u8],
}

/// Deterministic per-user grid offset in `[0, width)`, a multiple of
/// `granularity`.
///
/// HMAC-SHA256 keyed by the salt over the length-prefixed identity fields;
/// the first eight digest bytes (big-endian) are reduced modulo
/// `width / granularity`.
pub fn seeded_offset(input: SeedInput<'_>, width: Decimal, granularity: Decimal) -> Result<Decimal, PolicyError> {
    if width <= Decimal::ZERO {
        return Err(PolicyError::InvalidSpec("seeded offset needs a positive width".into()));
    }
    let steps = to_steps(width, granularity).filter(|s| *s > 0).ok_or_else(|| {
        PolicyError::InvalidSpec(format!(
            "width {} is not a multiple of granularity {}",
            format_decimal(width),
            format_decimal(granularity)
        ))
    })?;
    let mut mac = Hmac::<Sha256>::new_from_slice(input.salt).expect("hmac accepts any key length");
    for field in [input.user_id.as_bytes(), input.role_id.as_bytes()] {
        mac.update(&(field.len() as u32).to_be_bytes());
        mac.update(field);
    }
    mac.update(&[input.privilege.ordinal()]);
    mac.update(&(input.measure_id.len() as u32).to_be_bytes());
    mac.update(input.measure_id.as_bytes());
    let digest = mac.finalize().into_bytes();
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    let step = head % steps as u64;
    let offset = Decimal::from(step) * granularity;
    Ok(offset)
}
