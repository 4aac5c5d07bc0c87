//! Role-aware range desensitization.
//!
//! Raw measure values are never handed to a requester. Instead each value is
//! replaced by a grid-aligned range whose width is chosen by the requester's
//! privilege, and query results are delivered as range histograms or
//! range-masked records.
//!
//! * [`policy`]: bucket math, per-user offsets, policy validation.
//! * [`rules`]: users, roles, measure policies and the audit history.
//! * [`dataset`]: immutable versioned tables loaded from CSV.
//! * [`customizer`]: personalized data sets, redistribution, refresh and
//!   utility diagnostics.

pub mod customizer;
pub mod dataset;
pub mod decimal;
pub mod demo;
pub mod policy;
pub mod rules;
pub mod wire;

use sha2::{Digest, Sha256};

pub use decimal::Decimal;

/// Lowercase hex SHA-256.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
