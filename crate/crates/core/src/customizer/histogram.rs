//! Integer fast path: bucketization of step-encoded measure columns.

use crate::decimal::{to_steps, Decimal};
use crate::policy::{Bucket, Grid};

/// A grid expressed in granularity steps. `width == 0` is exact disclosure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StepGrid {
    pub width: i64,
    pub offset: i64,
}

impl StepGrid {
    pub fn from_grid(grid: Grid, granularity: Decimal) -> Option<Self> {
        Some(StepGrid { width: to_steps(grid.width, granularity)?, offset: to_steps(grid.offset, granularity)? })
    }

    /// Lower bound (in steps) of the cell holding `v`.
    #[inline]
    pub fn lo(&self, v: i64) -> i64 {
        if self.width == 0 {
            v
        } else {
            self.offset + (v - self.offset).div_euclid(self.width) * self.width
        }
    }

    pub fn bucket(&self, lo: i64, granularity: Decimal) -> Bucket {
        let lo_dec = Decimal::from(lo) * granularity;
        Bucket { lo: lo_dec, hi: Decimal::from(lo + self.width) * granularity }
    }
}

/// `(lo_steps, count)` for every non-empty cell, sorted by `lo`.
pub(crate) fn count_cells(values: impl Iterator<Item = i64>, grid: StepGrid) -> Vec<(i64, u64)> {
    let keys: Vec<i64> = values.map(|v| grid.lo(v)).collect();
    let (Some(&min), Some(&max)) = (keys.iter().min(), keys.iter().max()) else {
        return Vec::new();
    };
    let stride = grid.width.max(1);
    let span = ((max as i128 - min as i128) / stride as i128) as u128 + 1;
    if span <= (keys.len() as u128 * 4).max(1 << 16) {
        let mut counts = vec![0u64; span as usize];
        for k in &keys {
            counts[((k - min) / stride) as usize] += 1;
        }
        counts.into_iter().enumerate().filter(|(_, c)| *c > 0).map(|(i, c)| (min + i as i64 * stride, c)).collect()
    } else {
        let mut keys = keys;
        keys.sort_unstable();
        let mut out: Vec<(i64, u64)> = Vec::new();
        for k in keys {
            match out.last_mut() {
                Some((lo, c)) if *lo == k => *c += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }
}
