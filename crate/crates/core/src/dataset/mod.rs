//! Immutable, versioned, in-memory columnar tables.
//!
//! A [`TableVersion`] is built once from CSV text and never changes. Loading
//! more rows produces a new version; the old one stays readable with the
//! same digest.

mod catalog;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

pub use catalog::TableCatalog;

use crate::decimal::{ceil_steps, format_decimal, parse_decimal, serde_str_opt, to_steps, Decimal};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("type error at row {row}, column {column:?}: {message}")]
    TypeError { row: usize, column: String, message: String },
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("invalid filter on {column:?}: {message}")]
    InvalidFilter { column: String, message: String },
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("table {0:?} already exists")]
    TableExists(String),
    #[error("table {table:?} version {version} is no longer available")]
    StaleTableVersion { table: String, version: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Measure,
    Dimension,
    Identifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Decimal,
    String,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Measure => "measure",
            ColumnKind::Dimension => "dimension",
            ColumnKind::Identifier => "identifier",
        })
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Decimal => "decimal",
            ValueType::String => "string",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_str_opt")]
    pub granularity: Option<Decimal>,
}

impl ColumnDef {
    pub fn dimension(name: &str) -> Self {
        ColumnDef {
            name: name.into(),
            kind: ColumnKind::Dimension,
            value_type: ValueType::String,
            unit: None,
            granularity: None,
        }
    }

    pub fn identifier(name: &str) -> Self {
        ColumnDef {
            name: name.into(),
            kind: ColumnKind::Identifier,
            value_type: ValueType::String,
            unit: None,
            granularity: None,
        }
    }

    pub fn measure(name: &str, unit: &str, granularity: Decimal) -> Self {
        ColumnDef {
            name: name.into(),
            kind: ColumnKind::Measure,
            value_type: ValueType::Decimal,
            unit: Some(unit.into()),
            granularity: Some(granularity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub columns: Vec<ColumnDef>,
}

impl SchemaManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return Err(DatasetError::InvalidManifest("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(col.name.clone()));
            }
            if col.kind == ColumnKind::Measure {
                if col.value_type != ValueType::Decimal {
                    return Err(DatasetError::InvalidManifest(format!("measure {:?} must be decimal", col.name)));
                }
                if col.unit.is_none() {
                    return Err(DatasetError::InvalidManifest(format!("measure {:?} needs a unit", col.name)));
                }
                if !col.granularity.is_some_and(|g| g > Decimal::ZERO) {
                    return Err(DatasetError::InvalidManifest(format!(
                        "measure {:?} needs a positive granularity",
                        col.name
                    )));
                }
            }
            if col.value_type == ValueType::String && col.granularity.is_some() {
                return Err(DatasetError::InvalidManifest(format!(
                    "string column {:?} cannot carry a granularity",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Typed storage for one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnData {
    /// Decimals stored as whole multiples of `granularity`.
    Steps {
        granularity: Decimal,
        values: Vec<i64>,
    },
    Decimal(Vec<Decimal>),
    Text(Vec<String>),
}

impl ColumnData {
    fn empty(def: &ColumnDef) -> Self {
        match (def.value_type, def.granularity) {
            (ValueType::Decimal, Some(granularity)) => ColumnData::Steps { granularity, values: Vec::new() },
            (ValueType::Decimal, None) => ColumnData::Decimal(Vec::new()),
            (ValueType::String, _) => ColumnData::Text(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Steps { values, .. } => values.len(),
            ColumnData::Decimal(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Canonical text of one cell.
    pub fn render(&self, row: usize) -> String {
        match self {
            ColumnData::Steps { granularity, values } => format_decimal(Decimal::from(values[row]) * granularity),
            ColumnData::Decimal(v) => format_decimal(v[row]),
            ColumnData::Text(v) => v[row].clone(),
        }
    }

    /// Borrowed cell of a string column.
    pub fn text_at(&self, row: usize) -> Option<&str> {
        match self {
            ColumnData::Text(v) => Some(&v[row]),
            _ => None,
        }
    }

    pub fn decimal_at(&self, row: usize) -> Option<Decimal> {
        match self {
            ColumnData::Steps { granularity, values } => Some(Decimal::from(values[row]) * granularity),
            ColumnData::Decimal(v) => Some(v[row]),
            ColumnData::Text(_) => None,
        }
    }

    fn push(&mut self, cell: &str) -> Result<(), String> {
        match self {
            ColumnData::Steps { granularity, values } => {
                let value = parse_decimal(cell).ok_or_else(|| format!("{cell:?} is not a decimal"))?;
                let steps = to_steps(value, *granularity).ok_or_else(|| {
                    format!("{cell:?} is not a multiple of granularity {}", format_decimal(*granularity))
                })?;
                values.push(steps);
            }
            ColumnData::Decimal(v) => v.push(parse_decimal(cell).ok_or_else(|| format!("{cell:?} is not a decimal"))?),
            ColumnData::Text(v) => v.push(cell.to_string()),
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TableVersion {
    table_id: String,
    version: u64,
    manifest: Arc<SchemaManifest>,
    columns: Vec<ColumnData>,
    row_count: usize,
    digest: String,
}

impl TableVersion {
    pub fn table_id(&self) -> &str {
        &self.table_id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn manifest(&self) -> &SchemaManifest {
        &self.manifest
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// SHA-256 (hex) of the canonical serialization, computed at build time.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn column(&self, name: &str) -> Option<(&ColumnDef, &ColumnData)> {
        let idx = self.manifest.index_of(name)?;
        Some((&self.manifest.columns[idx], &self.columns[idx]))
    }

    pub fn columns(&self) -> impl Iterator<Item = (&ColumnDef, &ColumnData)> {
        self.manifest.columns.iter().zip(&self.columns)
    }

    /// Canonical serialization used for digests; see `docs/digest.md`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_canonical(self, &mut out);
        out
    }
}

fn write_canonical<S: CanonicalSink>(table: &TableVersion, out: &mut S) {
    let mut sep = false;
    for (def, data) in table.columns() {
        emit(out, &mut sep, &format!("column\t{}\t{}\t{}\t{}", def.name, def.kind, def.value_type, table.row_count));
        for row in 0..data.len() {
            emit(out, &mut sep, &data.render(row));
        }
    }
}

fn emit<S: CanonicalSink>(out: &mut S, sep: &mut bool, text: &str) {
    if *sep {
        out.put(b"\n");
    }
    *sep = true;
    out.put(text.as_bytes());
}

trait CanonicalSink {
    fn put(&mut self, bytes: &[u8]);
}

impl CanonicalSink for Vec<u8> {
    fn put(&mut self, bytes: &[u8]) {
        self.extend_from_slice(bytes);
    }
}

impl CanonicalSink for Sha256 {
    fn put(&mut self, bytes: &[u8]) {
        self.update(bytes);
    }
}

/// SHA-256 (hex) over the canonical serialization. Pure: recomputed from the
/// column data on every call.
pub fn snapshot_digest(table: &TableVersion) -> String {
    let mut hasher = Sha256::new();
    write_canonical(table, &mut hasher);
    hex::encode(hasher.finalize())
}

fn parse_rows(csv_text: &str, manifest: &SchemaManifest, columns: &mut [ColumnData]) -> Result<usize, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(csv_text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| DatasetError::Csv(e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<String> = manifest.columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        // an empty document has no header at all
        if !(header.is_empty() && csv_text.trim().is_empty()) {
            return Err(DatasetError::HeaderMismatch { expected, found: header });
        }
    }
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let row = i + 1;
        for ((cell, def), data) in record.iter().zip(&manifest.columns).zip(columns.iter_mut()) {
            if cell.contains(['\n', '\r']) {
                return Err(DatasetError::Csv(format!("row {row}: embedded newline in {:?}", def.name)));
            }
            data.push(cell).map_err(|message| DatasetError::TypeError { row, column: def.name.clone(), message })?;
        }
        rows += 1;
    }
    Ok(rows)
}

fn build(
    table_id: &str,
    version: u64,
    manifest: Arc<SchemaManifest>,
    columns: Vec<ColumnData>,
    row_count: usize,
) -> TableVersion {
    let mut table =
        TableVersion { table_id: table_id.to_string(), version, manifest, columns, row_count, digest: String::new() };
    table.digest = snapshot_digest(&table);
    table
}

/// Builds version 1 of `table_id` from CSV text whose header must list the
/// manifest columns exactly and in order. Data rows are numbered from 1 in
/// errors.
pub fn ingest_csv(table_id: &str, csv_text: &str, manifest: SchemaManifest) -> Result<TableVersion, DatasetError> {
    manifest.validate()?;
    let mut columns: Vec<ColumnData> = manifest.columns.iter().map(ColumnData::empty).collect();
    let rows = parse_rows(csv_text, &manifest, &mut columns)?;
    Ok(build(table_id, 1, Arc::new(manifest), columns, rows))
}

/// New version holding the old rows followed by the rows of `csv_text`.
pub fn append_rows(table: &TableVersion, csv_text: &str) -> Result<TableVersion, DatasetError> {
    let mut columns = table.columns.clone();
    let added = parse_rows(csv_text, &table.manifest, &mut columns)?;
    Ok(build(&table.table_id, table.version + 1, table.manifest.clone(), columns, table.row_count + added))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Ge,
    Lt,
}

impl fmt::Display for FilterOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterOp::Eq => "=",
            FilterOp::Ge => ">=",
            FilterOp::Lt => "<",
        })
    }
}

/// `column op operand`. Equality applies to dimensions, `ge`/`lt` to
/// measures.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    #[serde(deserialize_with = "operand_text")]
    pub operand: String,
}

impl Filter {
    pub fn eq(column: &str, operand: &str) -> Self {
        Filter { column: column.into(), op: FilterOp::Eq, operand: operand.into() }
    }

    pub fn ge(column: &str, operand: impl fmt::Display) -> Self {
        Filter { column: column.into(), op: FilterOp::Ge, operand: operand.to_string() }
    }

    pub fn lt(column: &str, operand: impl fmt::Display) -> Self {
        Filter { column: column.into(), op: FilterOp::Lt, operand: operand.to_string() }
    }

    /// Parses `COL=V`, `COL>=V` or `COL<V`.
    pub fn parse(text: &str) -> Option<Self> {
        if let Some((c, v)) = text.split_once(">=") {
            return Some(Filter::ge(c.trim(), v.trim()));
        }
        if let Some((c, v)) = text.split_once('<') {
            return Some(Filter::lt(c.trim(), v.trim()));
        }
        let (c, v) = text.split_once('=')?;
        Some(Filter::eq(c.trim(), v.trim()))
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.column, self.op, self.operand)
    }
}

fn operand_text<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        other => Err(serde::de::Error::custom(format!("unsupported operand {other}"))),
    }
}

enum Predicate<'a> {
    TextEq(&'a [String], &'a str),
    DecimalEq(&'a ColumnData, Decimal),
    StepsGe(&'a [i64], i64),
    StepsLt(&'a [i64], i64),
    DecimalGe(&'a ColumnData, Decimal),
    DecimalLt(&'a ColumnData, Decimal),
    Never,
}

impl Predicate<'_> {
    fn test(&self, row: usize) -> bool {
        match self {
            Predicate::TextEq(v, s) => v[row] == *s,
            Predicate::DecimalEq(c, x) => c.decimal_at(row) == Some(*x),
            Predicate::StepsGe(v, t) => v[row] >= *t,
            Predicate::StepsLt(v, t) => v[row] < *t,
            Predicate::DecimalGe(c, x) => c.decimal_at(row).is_some_and(|v| v >= *x),
            Predicate::DecimalLt(c, x) => c.decimal_at(row).is_some_and(|v| v < *x),
            Predicate::Never => false,
        }
    }
}

fn compile<'a>(table: &'a TableVersion, f: &'a Filter) -> Result<Predicate<'a>, DatasetError> {
    let (def, data) = table.column(&f.column).ok_or_else(|| DatasetError::UnknownColumn(f.column.clone()))?;
    let invalid = |message: String| DatasetError::InvalidFilter { column: f.column.clone(), message };
    match (f.op, def.kind) {
        (FilterOp::Eq, ColumnKind::Dimension) => Ok(match data {
            ColumnData::Text(v) => Predicate::TextEq(v, &f.operand),
            _ => match parse_decimal(&f.operand) {
                Some(x) => Predicate::DecimalEq(data, x),
                None => Predicate::Never,
            },
        }),
        (FilterOp::Ge | FilterOp::Lt, ColumnKind::Measure) => {
            let x = parse_decimal(&f.operand).ok_or_else(|| invalid(format!("{:?} is not a decimal", f.operand)))?;
            Ok(match data {
                ColumnData::Steps { granularity, values } => {
                    // v*g >= x  <=>  v >= ceil(x/g), and likewise for <
                    let t = ceil_steps(x, *granularity).ok_or_else(|| invalid("operand out of range".into()))?;
                    if f.op == FilterOp::Ge {
                        Predicate::StepsGe(values, t)
                    } else {
                        Predicate::StepsLt(values, t)
                    }
                }
                _ if f.op == FilterOp::Ge => Predicate::DecimalGe(data, x),
                _ => Predicate::DecimalLt(data, x),
            })
        }
        (op, kind) => Err(invalid(format!("operator {op} is not allowed on {kind} columns"))),
    }
}

/// Indices of the rows satisfying every filter, in row order.
pub fn scan(table: &TableVersion, filters: &[Filter]) -> Result<Vec<usize>, DatasetError> {
    let preds = filters.iter().map(|f| compile(table, f)).collect::<Result<Vec<_>, _>>()?;
    Ok((0..table.row_count).filter(|&row| preds.iter().all(|p| p.test(row))).collect())
}
