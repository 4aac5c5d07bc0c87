//! Plain-text tables for terminal output.

use pds_core::customizer::{CanonicalBucket, CanonicalDataSet, UtilityRow};
use pds_core::decimal::format_decimal;
use pds_core::rules::AuditEntry;

/// Left-aligned columns separated by two spaces.
pub fn grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                out.push_str(cell);
            } else {
                out.push_str(&format!("{cell:<w$}  "));
            }
        }
        out.push('\n');
        out
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn bucket_rows(buckets: &[CanonicalBucket]) -> Vec<Vec<String>> {
    buckets.iter().map(|b| vec![b.range.clone(), b.count.to_string()]).collect()
}

pub fn dataset(ds: &CanonicalDataSet) -> String {
    let mut out = format!(
        "measure {} ({})  width {}  table version {}  rows {}\n",
        ds.measure, ds.unit, ds.width, ds.table_version, ds.total
    );
    if let (Some(columns), Some(records)) = (&ds.columns, &ds.records) {
        let header: Vec<&str> = columns.iter().map(String::as_str).collect();
        out.push_str(&grid(&header, records));
        return out;
    }
    match (&ds.group_by, &ds.groups) {
        (Some(by), Some(groups)) => {
            let mut rows = Vec::new();
            for g in groups {
                for b in &g.buckets {
                    rows.push(vec![g.group.clone(), b.range.clone(), b.count.to_string()]);
                }
            }
            out.push_str(&grid(&[by, "Range", "Count"], &rows));
        }
        _ => out.push_str(&grid(&["Range", "Count"], &bucket_rows(&ds.buckets))),
    }
    out
}

pub fn utility(rows: &[UtilityRow]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.privilege.label().to_string(),
                format_decimal(r.width),
                format_decimal(r.offset),
                r.bucket_count.to_string(),
                r.chi_square.map_or("-".to_string(), |c| format!("{c:.4}")),
            ]
        })
        .collect();
    grid(&["Privilege", "Width", "Offset", "Buckets", "Chi-square"], &rows)
}

pub fn audit(entries: &[AuditEntry]) -> String {
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.timestamp.clone(),
                e.user_id.clone(),
                serde_json::to_value(e.action).unwrap().as_str().unwrap_or_default().to_string(),
                serde_json::to_value(e.outcome).unwrap().as_str().unwrap_or_default().to_string(),
                e.measure_ids.join(","),
                e.detail.clone(),
            ]
        })
        .collect();
    grid(&["Timestamp", "User", "Action", "Outcome", "Measures", "Detail"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_table() {
        let ds = CanonicalDataSet {
            measure: "annual_income_k".into(),
            unit: "$,000".into(),
            width: "30".into(),
            table_version: 1,
            total: 4,
            buckets: vec![
                CanonicalBucket { range: "60-90".into(), lo: "60".into(), hi: "90".into(), count: 3 },
                CanonicalBucket { range: "90-120".into(), lo: "90".into(), hi: "120".into(), count: 1 },
            ],
            group_by: None,
            groups: None,
            columns: None,
            records: None,
        };
        assert_eq!(
            dataset(&ds),
            "measure annual_income_k ($,000)  width 30  table version 1  rows 4\n\
             Range   Count\n\
             60-90   3\n\
             90-120  1\n"
        );
    }
}
