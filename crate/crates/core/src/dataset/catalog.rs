use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::RwLock;

use super::{append_rows, DatasetError, TableVersion};

/// The set of live tables, each with a bounded window of recent versions.
///
/// Publication is atomic: readers see either the previous latest version or
/// the new one.
pub struct TableCatalog {
    tables: RwLock<HashMap<String, VecDeque<Arc<TableVersion>>>>,
    max_versions: usize,
}

impl TableCatalog {
    pub fn new(max_versions: usize) -> Self {
        TableCatalog { tables: RwLock::new(HashMap::new()), max_versions: max_versions.max(1) }
    }

    pub fn insert(&self, table: TableVersion) -> Result<Arc<TableVersion>, DatasetError> {
        let mut tables = self.tables.write();
        if tables.contains_key(table.table_id()) {
            return Err(DatasetError::TableExists(table.table_id().to_string()));
        }
        let table = Arc::new(table);
        tables.insert(table.table_id().to_string(), VecDeque::from([table.clone()]));
        Ok(table)
    }

    /// Parses `csv_text` against the latest version and publishes the result.
    pub fn append(&self, table_id: &str, csv_text: &str) -> Result<Arc<TableVersion>, DatasetError> {
        let mut tables = self.tables.write();
        let history = tables.get_mut(table_id).ok_or_else(|| DatasetError::UnknownTable(table_id.to_string()))?;
        let latest = history.back().expect("histories are never empty").clone();
        let next = Arc::new(append_rows(&latest, csv_text)?);
        history.push_back(next.clone());
        while history.len() > self.max_versions {
            history.pop_front();
        }
        Ok(next)
    }

    pub fn latest(&self, table_id: &str) -> Result<Arc<TableVersion>, DatasetError> {
        self.tables
            .read()
            .get(table_id)
            .and_then(|h| h.back().cloned())
            .ok_or_else(|| DatasetError::UnknownTable(table_id.to_string()))
    }

    pub fn version(&self, table_id: &str, version: u64) -> Result<Arc<TableVersion>, DatasetError> {
        let tables = self.tables.read();
        let history = tables.get(table_id).ok_or_else(|| DatasetError::UnknownTable(table_id.to_string()))?;
        history
            .iter()
            .find(|t| t.version() == version)
            .cloned()
            .ok_or_else(|| DatasetError::StaleTableVersion { table: table_id.to_string(), version })
    }

    pub fn table_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.tables.read().keys().cloned().collect();
        ids.sort();
        ids
    }
}
