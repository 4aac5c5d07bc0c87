//! Canonical JSON rendering shared by the service and the CLI.
//!
//! Field order is fixed by the struct layout, so identical data sets render
//! to identical bytes regardless of which front end produced them.

use serde::{Deserialize, Serialize};

use super::{BucketCount, PersonalizedDataSet};
use crate::decimal::format_decimal;
use crate::policy::format_bucket;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalBucket {
    pub range: String,
    pub lo: String,
    pub hi: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalGroup {
    pub group: String,
    pub total: u64,
    pub buckets: Vec<CanonicalBucket>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalDataSet {
    pub measure: String,
    pub unit: String,
    pub width: String,
    pub table_version: u64,
    pub total: u64,
    pub buckets: Vec<CanonicalBucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<CanonicalGroup>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<Vec<String>>>,
}

fn buckets(list: &[BucketCount]) -> Vec<CanonicalBucket> {
    list.iter()
        .map(|b| CanonicalBucket {
            range: format_bucket(&b.bucket),
            lo: format_decimal(b.bucket.lo),
            hi: format_decimal(b.bucket.hi),
            count: b.count,
        })
        .collect()
}

impl PersonalizedDataSet {
    pub fn canonical(&self) -> CanonicalDataSet {
        CanonicalDataSet {
            measure: self.resolved.measure_id.clone(),
            unit: self.unit.clone(),
            width: format_decimal(self.resolved.width),
            table_version: self.recipe.table_version,
            total: self.total,
            buckets: buckets(&self.buckets),
            group_by: self.recipe.descriptor.group_by.clone(),
            groups: self.groups.as_ref().map(|gs| {
                gs.iter()
                    .map(|g| CanonicalGroup { group: g.group.clone(), total: g.total, buckets: buckets(&g.buckets) })
                    .collect()
            }),
            columns: self.records.as_ref().map(|r| r.columns.clone()),
            records: self.records.as_ref().map(|r| r.rows.clone()),
        }
    }

    /// Compact canonical JSON.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical()).expect("canonical data sets serialize")
    }
}
