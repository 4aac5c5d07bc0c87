//! A ready-made governance setup: five roles on the five privilege levels,
//! one user per role and a policy for `annual_income_k` in $,000 whose
//! ranges for a value of 75 are 60-90, 65-85, 70-80, 75-80 and 75.
//!
//! Used by the examples in the README, the CLI `init` command and tests.

use std::collections::BTreeSet;

use crate::dataset::{ColumnDef, ColumnKind, SchemaManifest, ValueType};
use crate::decimal::Decimal;
use crate::policy::{MeasurePolicy, PrivilegeLevel, RangeSpec};
use crate::rules::{api_key_digest, PolicySet, Portfolio, RoleDef, UserProfile};

pub const MEASURE: &str = "annual_income_k";
pub const UNIT: &str = "$,000";

/// `(role_id, user_id, privilege)` in ascending privilege order.
pub const ROLES: [(&str, &str, PrivilegeLevel); 5] = [
    ("external_user", "ext1", PrivilegeLevel::Low),
    ("internal_operator", "op1", PrivilegeLevel::MediumLow),
    ("managerial", "mgr1", PrivilegeLevel::Medium),
    ("knowledge_worker", "kw1", PrivilegeLevel::MediumHigh),
    ("cxo", "cxo1", PrivilegeLevel::High),
];

/// Bearer token of a demo user.
pub fn token_for(user_id: &str) -> String {
    format!("{user_id}-token")
}

pub fn income_policy() -> MeasurePolicy {
    let specs = [(30, 0), (20, 5), (10, 0), (5, 0), (0, 0)];
    MeasurePolicy {
        measure_id: MEASURE.to_string(),
        unit: UNIT.to_string(),
        granularity: Decimal::ONE,
        per_privilege: PrivilegeLevel::ALL
            .iter()
            .zip(specs)
            .map(|(level, (w, o))| (*level, RangeSpec::fixed(Decimal::from(w), Decimal::from(o))))
            .collect(),
    }
}

pub fn policy_set() -> PolicySet {
    PolicySet { salt_hex: "00112233445566778899aabbccddeeff".into(), measures: vec![income_policy()] }
}

pub fn portfolio() -> Portfolio {
    let dims: BTreeSet<String> = ["region", "segment"].iter().map(|s| s.to_string()).collect();
    let mut out = Portfolio::default();
    for (role_id, user_id, privilege) in ROLES {
        out.roles.push(RoleDef {
            role_id: role_id.to_string(),
            privilege,
            allowed_measures: [MEASURE.to_string()].into(),
            allowed_dimensions: dims.clone(),
            may_see_identifiers: privilege == PrivilegeLevel::High,
        });
        out.users.push(UserProfile {
            user_id: user_id.to_string(),
            display_name: format!("{role_id} demo user"),
            role_id: role_id.to_string(),
            api_key_digest: api_key_digest(&token_for(user_id)),
            active: true,
        });
    }
    out
}

/// `customer_id` (identifier), `region` and `segment` (dimensions),
/// `annual_income_k` (measure, $,000, step 1).
pub fn customer_manifest() -> SchemaManifest {
    SchemaManifest {
        columns: vec![
            ColumnDef::identifier("customer_id"),
            ColumnDef::dimension("region"),
            ColumnDef::dimension("segment"),
            ColumnDef {
                name: MEASURE.to_string(),
                kind: ColumnKind::Measure,
                value_type: ValueType::Decimal,
                unit: Some(UNIT.to_string()),
                granularity: Some(Decimal::ONE),
            },
        ],
    }
}
