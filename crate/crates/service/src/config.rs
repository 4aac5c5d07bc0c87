//! `layer.toml`: listen address, data paths, admin key digest and registry
//! sizing. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use pds_core::policy::{PolicyRules, PrivilegeLevel};
use pds_core::rules::{GovernanceRules, StorePaths};
use serde::Deserialize;

use crate::WorkspaceError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub policies_path: Option<PathBuf>,
    pub portfolio_path: Option<PathBuf>,
    pub audit_path: Option<PathBuf>,
    pub tables_path: Option<PathBuf>,
    /// Lowercase hex SHA-256 of the administrator bearer token.
    pub admin_key_digest: String,
    #[serde(default = "default_capacity")]
    pub report_capacity: usize,
    #[serde(default = "default_versions")]
    pub max_table_versions: usize,
    #[serde(default)]
    pub audit_fsync: bool,
    #[serde(default = "high")]
    pub exact_floor: PrivilegeLevel,
    #[serde(default = "high")]
    pub identifier_floor: PrivilegeLevel,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_capacity() -> usize {
    1024
}

fn default_versions() -> usize {
    8
}

fn high() -> PrivilegeLevel {
    PrivilegeLevel::High
}

impl LayerConfig {
    pub fn parse(text: &str) -> Result<Self, WorkspaceError> {
        toml::from_str(text).map_err(|e| WorkspaceError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkspaceError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| WorkspaceError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    /// Defaults for a data directory, with the given admin key digest.
    pub fn for_dir(data_dir: impl Into<PathBuf>, admin_key_digest: &str) -> Self {
        LayerConfig {
            listen: default_listen(),
            data_dir: data_dir.into(),
            policies_path: None,
            portfolio_path: None,
            audit_path: None,
            tables_path: None,
            admin_key_digest: admin_key_digest.to_string(),
            report_capacity: default_capacity(),
            max_table_versions: default_versions(),
            audit_fsync: false,
            exact_floor: high(),
            identifier_floor: high(),
        }
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        for p in [&mut self.policies_path, &mut self.portfolio_path, &mut self.audit_path, &mut self.tables_path]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn store_paths(&self) -> StorePaths {
        StorePaths {
            policies: self.policies_path.clone().unwrap_or_else(|| self.data_dir.join("policies.json")),
            portfolio: self.portfolio_path.clone().unwrap_or_else(|| self.data_dir.join("portfolio.json")),
        }
    }

    pub fn audit_file(&self) -> PathBuf {
        self.audit_path.clone().unwrap_or_else(|| self.data_dir.join("audit.ndjson"))
    }

    pub fn tables_file(&self) -> PathBuf {
        self.tables_path.clone().unwrap_or_else(|| self.data_dir.join("tables.json"))
    }

    pub fn governance(&self) -> GovernanceRules {
        GovernanceRules {
            policy: PolicyRules { exact_floor: self.exact_floor },
            identifier_floor: self.identifier_floor,
        }
    }
}
