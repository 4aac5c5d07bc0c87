//! Append-only access history, mirrored to a newline-delimited JSON file.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Query,
    AdminChange,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: String,
    pub user_id: String,
    pub action: AuditAction,
    pub measure_ids: Vec<String>,
    pub query_digest: String,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub since: Option<DateTime<Utc>>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
}

impl AuditFilter {
    pub fn matches(&self, entry: &AuditEntry) -> bool {
        if let Some(user) = &self.user_id {
            if &entry.user_id != user {
                return false;
            }
        }
        if let Some(outcome) = self.outcome {
            if entry.outcome != outcome {
                return false;
            }
        }
        if let Some(since) = self.since {
            match DateTime::parse_from_rfc3339(&entry.timestamp) {
                Ok(ts) if ts.with_timezone(&Utc) >= since => {}
                _ => return false,
            }
        }
        true
    }
}

/// Fields of an entry before it is stamped.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub user_id: String,
    pub action: AuditAction,
    pub measure_ids: Vec<String>,
    pub query_digest: String,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("audit log {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

struct Inner {
    entries: Vec<AuditEntry>,
    sink: Option<(PathBuf, File)>,
    last: Option<DateTime<Utc>>,
}

pub struct AuditLog {
    inner: Mutex<Inner>,
    fsync: bool,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog { inner: Mutex::new(Inner { entries: Vec::new(), sink: None, last: None }), fsync: false }
    }

    /// Opens (or creates) `path`, loading existing entries.
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| AuditError::Io { path: path.clone(), source };
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(&line).map_err(|source| AuditError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let last = entries
            .last()
            .and_then(|e: &AuditEntry| DateTime::parse_from_rfc3339(&e.timestamp).ok())
            .map(|t| t.with_timezone(&Utc));
        Ok(AuditLog { inner: Mutex::new(Inner { entries, sink: Some((path, file)), last }), fsync })
    }

    /// Stamps and appends one entry. Timestamps never go backwards.
    pub fn append(&self, record: AuditRecord) -> Result<AuditEntry, AuditError> {
        let mut inner = self.inner.lock();
        let mut now = Utc::now();
        if let Some(last) = inner.last {
            now = now.max(last);
        }
        let entry = AuditEntry {
            timestamp: now.to_rfc3339_opts(SecondsFormat::Micros, true),
            user_id: record.user_id,
            action: record.action,
            measure_ids: record.measure_ids,
            query_digest: record.query_digest,
            outcome: record.outcome,
            detail: record.detail,
        };
        if let Some((path, file)) = inner.sink.as_mut() {
            let mut line = serde_json::to_vec(&entry).expect("audit entries serialize");
            line.push(b'\n');
            let io = |source| AuditError::Io { path: path.clone(), source };
            file.write_all(&line).map_err(io)?;
            file.flush().map_err(io)?;
            if self.fsync {
                file.sync_data().map_err(io)?;
            }
        }
        inner.last = Some(now);
        inner.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn list(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        self.inner.lock().entries.iter().filter(|e| filter.matches(e)).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
