//! Everything a front end needs at startup: the rule engine, the table
//! catalog and the `tables.json` registry of source files.
//!
//! Table data is never copied. `tables.json` records the manifest path and
//! the CSV files loaded for each table, in order; opening a workspace
//! replays those loads into fresh immutable versions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pds_core::dataset::{ingest_csv, SchemaManifest, TableCatalog, TableVersion};
use pds_core::rules::{write_json_atomic, AuditLog, RuleEngine};
use serde::{Deserialize, Serialize};

use crate::{LayerConfig, WorkspaceError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRegistry {
    #[serde(default)]
    pub tables: BTreeMap<String, TableSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSource {
    pub manifest: PathBuf,
    pub loads: Vec<PathBuf>,
}

pub struct Workspace {
    pub config: LayerConfig,
    pub engine: Arc<RuleEngine>,
    pub catalog: Arc<TableCatalog>,
}

fn read(path: &Path) -> Result<String, WorkspaceError> {
    std::fs::read_to_string(path).map_err(|e| WorkspaceError::Io(format!("{}: {e}", path.display())))
}

pub fn read_manifest(path: &Path) -> Result<SchemaManifest, WorkspaceError> {
    serde_json::from_str(&read(path)?).map_err(|e| WorkspaceError::Json(format!("{}: {e}", path.display())))
}

impl Workspace {
    pub fn open(config: LayerConfig) -> Result<Self, WorkspaceError> {
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| WorkspaceError::Io(format!("{}: {e}", config.data_dir.display())))?;
        let audit = AuditLog::open(config.audit_file(), config.audit_fsync)?;
        let engine = RuleEngine::open(config.store_paths(), audit, config.governance())?;
        let catalog = TableCatalog::new(config.max_table_versions);
        for (table_id, source) in Self::registry(&config)?.tables {
            let manifest = read_manifest(&source.manifest)?;
            let mut loads = source.loads.iter();
            let first = match loads.next() {
                Some(p) => read(p)?,
                None => String::new(),
            };
            catalog.insert(ingest_csv(&table_id, &first, manifest)?)?;
            for p in loads {
                catalog.append(&table_id, &read(p)?)?;
            }
        }
        Ok(Workspace { config, engine: Arc::new(engine), catalog: Arc::new(catalog) })
    }

    fn registry(config: &LayerConfig) -> Result<TableRegistry, WorkspaceError> {
        let path = config.tables_file();
        if !path.exists() {
            return Ok(TableRegistry::default());
        }
        serde_json::from_str(&read(&path)?).map_err(|e| WorkspaceError::Json(format!("{}: {e}", path.display())))
    }

    /// Loads `csv_path` into `table_id`: version 1 for a new table, the next
    /// version otherwise (the manifest must then match). The source paths
    /// are recorded in `tables.json`.
    pub fn ingest(
        &self,
        table_id: &str,
        csv_path: &Path,
        manifest_path: &Path,
    ) -> Result<Arc<TableVersion>, WorkspaceError> {
        let abs = |p: &Path| std::fs::canonicalize(p).map_err(|e| WorkspaceError::Io(format!("{}: {e}", p.display())));
        let csv_path = abs(csv_path)?;
        let manifest_path = abs(manifest_path)?;
        let manifest = read_manifest(&manifest_path)?;
        let csv = read(&csv_path)?;
        let mut registry = Self::registry(&self.config)?;
        let table = match self.catalog.latest(table_id) {
            Ok(existing) => {
                if *existing.manifest() != manifest {
                    return Err(WorkspaceError::Config(format!(
                        "manifest for {table_id:?} differs from the one it was created with"
                    )));
                }
                self.catalog.append(table_id, &csv)?
            }
            Err(_) => self.catalog.insert(ingest_csv(table_id, &csv, manifest)?)?,
        };
        registry
            .tables
            .entry(table_id.to_string())
            .or_insert_with(|| TableSource { manifest: manifest_path, loads: Vec::new() })
            .loads
            .push(csv_path);
        write_json_atomic(&self.config.tables_file(), &registry)?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pds_core::demo;

    #[test]
    fn ingest_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        std::fs::write(&manifest, serde_json::to_string(&demo::customer_manifest()).unwrap()).unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "customer_id,region,segment,annual_income_k\nc1,EU,retail,75\n").unwrap();
        std::fs::write(&b, "customer_id,region,segment,annual_income_k\nc2,US,retail,62\n").unwrap();

        let config = LayerConfig::for_dir(dir.path().join("data"), "00");
        let ws = Workspace::open(config.clone()).unwrap();
        assert_eq!(ws.ingest("cust", &a, &manifest).unwrap().version(), 1);
        let v2 = ws.ingest("cust", &b, &manifest).unwrap();
        assert_eq!((v2.version(), v2.row_count()), (2, 2));
        let digest = v2.digest().to_string();
        drop(ws);

        let ws = Workspace::open(config).unwrap();
        let latest = ws.catalog.latest("cust").unwrap();
        assert_eq!((latest.version(), latest.digest()), (2, digest.as_str()));
        assert!(ws.ingest("cust", &a, &dir.path().join("missing.json")).is_err());
    }
}
