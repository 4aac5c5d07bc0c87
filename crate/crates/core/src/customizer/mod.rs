//! The data range customizer: turns raw rows into personalized data sets.
//!
//! A requester never receives a raw measure value when their resolved width
//! is positive. Histograms count rows per grid cell; records mode replaces
//! the measure cell with its formatted range. Reports carry the query
//! recipe rather than data, so redistribution and refresh always recompute
//! from the immutable table.

mod canonical;
mod histogram;
mod utility;

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use canonical::{CanonicalBucket, CanonicalDataSet, CanonicalGroup};
pub use utility::{utility_report, UtilityRow};

use crate::dataset::{scan, ColumnData, ColumnKind, DatasetError, Filter, FilterOp, TableVersion};
use crate::decimal::{format_decimal, parse_decimal};
use crate::policy::{bucket_for, format_bucket, Bucket};
use crate::rules::{AccessRequest, ResolvedSpec, RuleEngine, RuleError};
use histogram::{count_cells, StepGrid};

#[derive(Debug, thiserror::Error)]
pub enum CustomizerError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("exact spec: filters pass through without snapping")]
    SnapOnExactSpec,
    #[error("range spec for {measure:?} does not align with the column granularity {granularity}")]
    GranularityMismatch { measure: String, granularity: String },
    #[error("report belongs to {owner:?}")]
    NotReportOwner { owner: String },
    #[error("table version {latest} is older than the report's version {report}")]
    VersionRegression { report: u64, latest: u64 },
    #[error("policy has no level with a non-zero width")]
    NoNonZeroWidth,
}

impl CustomizerError {
    /// True for refusals the requester's privileges caused.
    pub fn is_access_denial(&self) -> bool {
        matches!(
            self,
            CustomizerError::Rule(
                RuleError::AccessDenied(_)
                    | RuleError::IdentifierForbidden(_)
                    | RuleError::InactiveUser(_)
                    | RuleError::NotAdministrator
            ) | CustomizerError::NotReportOwner { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    Histogram,
    Records,
}

/// A re-executable request: what to read, how to filter, how to present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDescriptor {
    pub table_id: String,
    pub measure_id: String,
    #[serde(default)]
    pub filters: Vec<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<String>,
    #[serde(default)]
    pub mode: QueryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_columns: Option<Vec<String>>,
}

impl QueryDescriptor {
    pub fn histogram(table_id: &str, measure_id: &str) -> Self {
        QueryDescriptor {
            table_id: table_id.into(),
            measure_id: measure_id.into(),
            filters: Vec::new(),
            group_by: None,
            mode: QueryMode::Histogram,
            requested_columns: None,
        }
    }

    pub fn digest(&self) -> String {
        crate::digest_hex(&serde_json::to_vec(self).expect("descriptors serialize"))
    }
}

/// Everything needed to recompute a report: the descriptor with its
/// original (unsnapped) operands, the table version and the submitter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecipe {
    pub descriptor: QueryDescriptor,
    pub table_version: u64,
    pub requested_by: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketCount {
    pub bucket: Bucket,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupHistogram {
    pub group: String,
    pub total: u64,
    pub buckets: Vec<BucketCount>,
}

/// Range-masked rows: the measure column holds formatted ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRecords {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedDataSet {
    pub recipe: ReportRecipe,
    pub resolved: ResolvedSpec,
    pub unit: String,
    pub buckets: Vec<BucketCount>,
    pub groups: Option<Vec<GroupHistogram>>,
    pub records: Option<MaskedRecords>,
    pub total: u64,
    pub generated_at: DateTime<Utc>,
}

impl PersonalizedDataSet {
    pub fn descriptor(&self) -> &QueryDescriptor {
        &self.recipe.descriptor
    }

    pub fn table_version(&self) -> u64 {
        self.recipe.table_version
    }

    /// Same report content, ignoring when it was generated.
    pub fn same_content(&self, other: &PersonalizedDataSet) -> bool {
        PersonalizedDataSet { generated_at: other.generated_at, ..self.clone() } == *other
    }
}

/// Snaps a measure threshold down to the lower bound of the cell holding
/// it, so a predicate selects whole cells only. Idempotent.
pub fn snap_filter(filter: &Filter, spec: &ResolvedSpec) -> Result<Filter, CustomizerError> {
    if spec.is_exact() {
        return Err(CustomizerError::SnapOnExactSpec);
    }
    if filter.op == FilterOp::Eq {
        return Err(CustomizerError::InvalidQuery(format!("cannot snap equality filter on {:?}", filter.column)));
    }
    let operand = parse_decimal(&filter.operand)
        .ok_or_else(|| CustomizerError::InvalidQuery(format!("{:?} is not a decimal", filter.operand)))?;
    let cell = bucket_for(operand, spec.grid()).map_err(|e| CustomizerError::InvalidQuery(e.to_string()))?;
    Ok(Filter { column: filter.column.clone(), op: filter.op, operand: format_decimal(cell.lo) })
}

struct Plan {
    dimensions: Vec<String>,
    identifiers: Vec<String>,
    columns: Vec<String>,
}

fn plan(table: &TableVersion, q: &QueryDescriptor) -> Result<Plan, CustomizerError> {
    let invalid = |m: String| CustomizerError::InvalidQuery(m);
    let manifest = table.manifest();
    if q.table_id != table.table_id() {
        return Err(invalid(format!("query targets {:?}, table is {:?}", q.table_id, table.table_id())));
    }
    let measure = manifest.get(&q.measure_id).ok_or_else(|| DatasetError::UnknownColumn(q.measure_id.clone()))?;
    if measure.kind != ColumnKind::Measure {
        return Err(invalid(format!("{:?} is not a measure", q.measure_id)));
    }
    let mut dimensions = Vec::new();
    let mut identifiers = Vec::new();
    for f in &q.filters {
        let def = manifest.get(&f.column).ok_or_else(|| DatasetError::UnknownColumn(f.column.clone()))?;
        match (f.op, def.kind) {
            (FilterOp::Eq, ColumnKind::Dimension) => dimensions.push(f.column.clone()),
            (FilterOp::Ge | FilterOp::Lt, ColumnKind::Measure) if f.column == q.measure_id => {
                if parse_decimal(&f.operand).is_none() {
                    return Err(invalid(format!("{:?} is not a decimal", f.operand)));
                }
            }
            (FilterOp::Ge | FilterOp::Lt, ColumnKind::Measure) => {
                return Err(invalid(format!("measure filters must use the queried measure, not {:?}", f.column)))
            }
            (op, kind) => return Err(invalid(format!("operator {op} is not allowed on {kind} column {:?}", f.column))),
        }
    }
    if let Some(g) = &q.group_by {
        let def = manifest.get(g).ok_or_else(|| DatasetError::UnknownColumn(g.clone()))?;
        if def.kind != ColumnKind::Dimension {
            return Err(invalid(format!("group_by must be a dimension, {g:?} is a {}", def.kind)));
        }
        dimensions.push(g.clone());
    }
    let mut columns = Vec::new();
    if q.mode == QueryMode::Records {
        columns = q.requested_columns.clone().unwrap_or_default();
        if !columns.contains(&q.measure_id) {
            columns.insert(0, q.measure_id.clone());
        }
        for c in &columns {
            let def = manifest.get(c).ok_or_else(|| DatasetError::UnknownColumn(c.clone()))?;
            match def.kind {
                ColumnKind::Dimension => dimensions.push(c.clone()),
                ColumnKind::Identifier => identifiers.push(c.clone()),
                ColumnKind::Measure if *c == q.measure_id => {}
                ColumnKind::Measure => {
                    return Err(invalid(format!("records may only carry the queried measure, not {c:?}")))
                }
            }
        }
    }
    dimensions.sort();
    dimensions.dedup();
    Ok(Plan { dimensions, identifiers, columns })
}

/// Builds the requester's personalized data set for `q` over `table`.
///
/// Exactly one access decision is recorded per call once the query is
/// well-formed.
pub fn personalize(
    engine: &RuleEngine,
    table: &TableVersion,
    q: &QueryDescriptor,
    user_id: &str,
) -> Result<PersonalizedDataSet, CustomizerError> {
    let plan = plan(table, q)?;
    let resolved = engine.authorize(&AccessRequest {
        user_id: user_id.to_string(),
        measure_id: q.measure_id.clone(),
        dimensions: plan.dimensions.clone(),
        identifiers: plan.identifiers.clone(),
        query_digest: q.digest(),
    })?;
    render(table, q, &plan, resolved, user_id)
}

fn render(
    table: &TableVersion,
    q: &QueryDescriptor,
    plan: &Plan,
    resolved: ResolvedSpec,
    user_id: &str,
) -> Result<PersonalizedDataSet, CustomizerError> {
    let (def, data) = table.column(&q.measure_id).expect("planned");
    let ColumnData::Steps { granularity, values } = data else { unreachable!("measure columns are step-encoded") };
    let granularity = *granularity;
    let grid = StepGrid::from_grid(resolved.grid(), granularity).ok_or_else(|| {
        CustomizerError::GranularityMismatch { measure: q.measure_id.clone(), granularity: format_decimal(granularity) }
    })?;

    let filters = q
        .filters
        .iter()
        .map(|f| match f.op {
            FilterOp::Eq => Ok(f.clone()),
            _ if resolved.is_exact() => Ok(f.clone()),
            _ => snap_filter(f, &resolved),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let rows: Option<Vec<usize>> = if filters.is_empty() { None } else { Some(scan(table, &filters)?) };
    let total = rows.as_ref().map_or(values.len(), Vec::len) as u64;
    let to_buckets = |cells: Vec<(i64, u64)>| -> Vec<BucketCount> {
        cells.into_iter().map(|(lo, count)| BucketCount { bucket: grid.bucket(lo, granularity), count }).collect()
    };
    let buckets = to_buckets(match &rows {
        None => count_cells(values.iter().copied(), grid),
        Some(rows) => count_cells(rows.iter().map(|&r| values[r]), grid),
    });

    let groups = match &q.group_by {
        None => None,
        Some(g) => {
            let (_, gdata) = table.column(g).expect("planned");
            let mut members: BTreeMap<Cow<str>, Vec<i64>> = BTreeMap::new();
            let mut add = |r: usize| {
                let key = gdata.text_at(r).map_or_else(|| Cow::Owned(gdata.render(r)), Cow::Borrowed);
                members.entry(key).or_default().push(values[r])
            };
            match &rows {
                None => (0..values.len()).for_each(&mut add),
                Some(rows) => rows.iter().copied().for_each(&mut add),
            }
            Some(
                members
                    .into_iter()
                    .map(|(group, vals)| GroupHistogram {
                        group: group.into_owned(),
                        total: vals.len() as u64,
                        buckets: to_buckets(count_cells(vals.into_iter(), grid)),
                    })
                    .collect(),
            )
        }
    };

    let records = (q.mode == QueryMode::Records).then(|| {
        let cols: Vec<(&String, &ColumnData)> =
            plan.columns.iter().map(|c| (c, table.column(c).expect("planned").1)).collect();
        // one formatted range per occupied cell, not per row
        let mut ranges: HashMap<i64, String> = HashMap::new();
        let mut out = Vec::new();
        let mut emit = |r: usize| {
            out.push(
                cols.iter()
                    .map(|(name, data)| {
                        if **name == q.measure_id {
                            let lo = grid.lo(values[r]);
                            ranges.entry(lo).or_insert_with(|| format_bucket(&grid.bucket(lo, granularity))).clone()
                        } else {
                            data.render(r)
                        }
                    })
                    .collect(),
            )
        };
        match &rows {
            None => (0..values.len()).for_each(&mut emit),
            Some(rows) => rows.iter().copied().for_each(&mut emit),
        }
        MaskedRecords { columns: plan.columns.clone(), rows: out }
    });

    Ok(PersonalizedDataSet {
        recipe: ReportRecipe {
            descriptor: q.clone(),
            table_version: table.version(),
            requested_by: user_id.to_string(),
        },
        resolved,
        unit: def.unit.clone().unwrap_or_default(),
        buckets,
        groups,
        records,
        total,
        generated_at: Utc::now(),
    })
}

/// Re-renders a submitted report for `viewer_id` at the viewer's own
/// resolved spec, recomputing from the same table version.
pub fn redistribute(
    engine: &RuleEngine,
    table: &TableVersion,
    recipe: &ReportRecipe,
    viewer_id: &str,
) -> Result<PersonalizedDataSet, CustomizerError> {
    if table.table_id() != recipe.descriptor.table_id || table.version() != recipe.table_version {
        return Err(DatasetError::StaleTableVersion {
            table: recipe.descriptor.table_id.clone(),
            version: recipe.table_version,
        }
        .into());
    }
    personalize(engine, table, &recipe.descriptor, viewer_id)
}

/// Re-executes the report's query against `latest` for its submitter.
pub fn refresh(
    engine: &RuleEngine,
    recipe: &ReportRecipe,
    user_id: &str,
    latest: &TableVersion,
) -> Result<PersonalizedDataSet, CustomizerError> {
    if user_id != recipe.requested_by {
        return Err(CustomizerError::NotReportOwner { owner: recipe.requested_by.clone() });
    }
    if latest.version() < recipe.table_version {
        return Err(CustomizerError::VersionRegression { report: recipe.table_version, latest: latest.version() });
    }
    personalize(engine, latest, &recipe.descriptor, user_id)
}
