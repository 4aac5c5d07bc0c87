//! Chi-square utility diagnostic: how far each privilege level's coarse
//! histogram is from the finest grid the policy offers.
//!
//! Observed counts come from the reference grid (finest non-zero width,
//! offset 0). Expected counts spread each coarse bucket's count uniformly
//! over the reference cells it overlaps, proportional to overlap length.
//! Reported only; nothing is enforced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::histogram::{count_cells, StepGrid};
use super::CustomizerError;
use crate::dataset::{ColumnData, ColumnKind, DatasetError, TableVersion};
use crate::decimal::{format_decimal, serde_str, Decimal};
use crate::policy::{Grid, MeasurePolicy, OffsetMode, PrivilegeLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub privilege: PrivilegeLevel,
    #[serde(with = "serde_str")]
    pub width: Decimal,
    #[serde(with = "serde_str")]
    pub offset: Decimal,
    pub bucket_count: usize,
    /// `None` for exact (width 0) levels.
    pub chi_square: Option<f64>,
}

/// One row per privilege level present in `policy`. User-seeded levels are
/// evaluated at offset 0.
pub fn utility_report(
    table: &TableVersion,
    measure_id: &str,
    policy: &MeasurePolicy,
) -> Result<Vec<UtilityRow>, CustomizerError> {
    let (def, data) = table.column(measure_id).ok_or_else(|| DatasetError::UnknownColumn(measure_id.to_string()))?;
    let (ColumnKind::Measure, ColumnData::Steps { granularity, values }) = (def.kind, data) else {
        return Err(CustomizerError::InvalidQuery(format!("{measure_id:?} is not a measure")));
    };
    let granularity = *granularity;
    let mismatch = || CustomizerError::GranularityMismatch {
        measure: measure_id.to_string(),
        granularity: format_decimal(granularity),
    };
    let reference_width = policy
        .per_privilege
        .values()
        .map(|s| s.width)
        .filter(|w| *w > Decimal::ZERO)
        .min()
        .ok_or(CustomizerError::NoNonZeroWidth)?;
    let reference = StepGrid::from_grid(Grid { width: reference_width, offset: Decimal::ZERO }, granularity)
        .ok_or_else(mismatch)?;
    let observed: BTreeMap<i64, f64> =
        count_cells(values.iter().copied(), reference).into_iter().map(|(lo, c)| (lo, c as f64)).collect();

    let mut out = Vec::new();
    for (&privilege, spec) in &policy.per_privilege {
        let offset = match spec.offset_mode {
            OffsetMode::Fixed(o) => o,
            OffsetMode::UserSeeded => Decimal::ZERO,
        };
        let grid = StepGrid::from_grid(Grid { width: spec.width, offset }, granularity).ok_or_else(mismatch)?;
        let cells = count_cells(values.iter().copied(), grid);
        let chi_square = (grid.width > 0).then(|| chi_square(&observed, &cells, grid.width, reference.width));
        out.push(UtilityRow { privilege, width: spec.width, offset, bucket_count: cells.len(), chi_square });
    }
    Ok(out)
}

fn chi_square(observed: &BTreeMap<i64, f64>, coarse: &[(i64, u64)], width: i64, reference: i64) -> f64 {
    let mut expected: BTreeMap<i64, f64> = BTreeMap::new();
    for &(lo, count) in coarse {
        let hi = lo + width;
        let mut cell = lo.div_euclid(reference) * reference;
        while cell < hi {
            let overlap = (hi.min(cell + reference) - lo.max(cell)) as f64;
            *expected.entry(cell).or_default() += count as f64 * overlap / width as f64;
            cell += reference;
        }
    }
    expected
        .iter()
        .filter(|(_, e)| **e > 0.0)
        .map(|(cell, e)| {
            let o = observed.get(cell).copied().unwrap_or(0.0);
            (o - e) * (o - e) / e
        })
        .sum()
}
