use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decimal::{serde_str, Decimal};
use crate::policy::{Grid, MeasurePolicy, PrivilegeLevel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub display_name: String,
    pub role_id: String,
    /// Lowercase hex SHA-256 of the user's bearer token.
    pub api_key_digest: String,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleDef {
    pub role_id: String,
    pub privilege: PrivilegeLevel,
    #[serde(default)]
    pub allowed_measures: BTreeSet<String>,
    #[serde(default)]
    pub allowed_dimensions: BTreeSet<String>,
    #[serde(default)]
    pub may_see_identifiers: bool,
}

/// On-disk form of `portfolio.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    #[serde(default)]
    pub roles: Vec<RoleDef>,
    #[serde(default)]
    pub users: Vec<UserProfile>,
}

/// On-disk form of `policies.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    pub salt_hex: String,
    #[serde(default)]
    pub measures: Vec<MeasurePolicy>,
}

/// The concrete range rule for one requester and one measure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSpec {
    pub measure_id: String,
    #[serde(with = "serde_str")]
    pub width: Decimal,
    #[serde(with = "serde_str")]
    pub offset: Decimal,
    pub privilege: PrivilegeLevel,
    pub role_id: String,
    pub resolved_for: String,
}

impl ResolvedSpec {
    pub fn grid(&self) -> Grid {
        Grid { width: self.width, offset: self.offset }
    }

    pub fn is_exact(&self) -> bool {
        self.width.is_zero()
    }
}

/// Lowercase hex SHA-256 of a bearer token, as stored in `api_key_digest`.
pub fn api_key_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}
