use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    pub latency_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_us: Option<f64>,
}

/// One stored kernel with the metadata retrieval ranks on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbRecord {
    pub id: String,
    pub features: String,
    pub logic_embedding: Vec<f64>,
    pub shape_embedding: Vec<f64>,
    pub dsl: String,
    pub backend: String,
    pub op_type: String,
    pub shape_info: String,
    pub code: String,
    pub sketch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf: Option<PerfRecord>,
    /// Optimization notes that led to this kernel.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub analysis: String,
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("database {path}: {message}")]
    Io { path: String, message: String },
    #[error("database {path}, line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("invalid record `{id}`: {message}")]
    Invalid { id: String, message: String },
}

impl DbRecord {
    pub fn check(&self) -> Result<(), StorageError> {
        let bad = |m: &str| Err(StorageError::Invalid { id: self.id.clone(), message: m.to_string() });
        if self.dsl.is_empty() || self.backend.is_empty() || self.op_type.is_empty() {
            return bad("dsl, backend and op_type must be non-empty");
        }
        if self.logic_embedding.is_empty() || self.logic_embedding.len() != self.shape_embedding.len() {
            return bad("embeddings must share one non-zero dimension");
        }
        for v in [&self.logic_embedding, &self.shape_embedding] {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return bad("embeddings must have unit norm");
            }
        }
        Ok(())
    }

    /// Content-derived id used when a record arrives without one.
    pub fn content_id(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.op_type, &self.dsl, &self.backend, &self.sketch, &self.code] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        format!("{}-{}", self.op_type, &hex::encode(h.finalize())[..12])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanFilter {
    pub dsl: Option<String>,
    pub backend: Option<String>,
    pub op_type: Option<String>,
}

impl ScanFilter {
    pub fn matches(&self, r: &DbRecord) -> bool {
        let ok = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w == have);
        ok(&self.dsl, &r.dsl) && ok(&self.backend, &r.backend) && ok(&self.op_type, &r.op_type)
    }
}

/// Append-only `.kdb` file with one JSON record per line, mirrored in
/// memory. Appends take an exclusive file lock, so several handles (or
/// processes) can share a file.
#[derive(Debug)]
pub struct KernelDb {
    path: Option<PathBuf>,
    records: RwLock<Vec<DbRecord>>,
    writer: Mutex<()>,
}

impl KernelDb {
    /// A database that lives only in memory.
    pub fn in_memory() -> KernelDb {
        KernelDb { path: None, records: RwLock::default(), writer: Mutex::default() }
    }

    pub fn open(path: &Path) -> Result<KernelDb, StorageError> {
        let db = KernelDb { path: Some(path.to_path_buf()), records: RwLock::default(), writer: Mutex::default() };
        db.reload()?;
        Ok(db)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn io(&self, e: impl std::fmt::Display) -> StorageError {
        StorageError::Io { path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(), message: e.to_string() }
    }

    /// Rebuilds the in-memory index from the file. A final line without a
    /// newline is an append in progress and is skipped.
    pub fn reload(&self) -> Result<(), StorageError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut out = Vec::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| self.io(e))?;
            let mut reader = BufReader::new(f);
            let mut line = String::new();
            let mut no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| self.io(e))?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                no += 1;
                if line.trim().is_empty() {
                    continue;
                }
                let r: DbRecord = serde_json::from_str(&line).map_err(|e| StorageError::Corrupt {
                    path: path.display().to_string(),
                    line: no,
                    message: e.to_string(),
                })?;
                out.push(r);
            }
        }
        *self.records.write().unwrap_or_else(|p| p.into_inner()) = out;
        Ok(())
    }

    /// Validates and appends `record`; returns its id.
    pub fn insert(&self, mut record: DbRecord) -> Result<String, StorageError> {
        if record.id.is_empty() {
            record.id = record.content_id();
        }
        record.check()?;
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| self.io(e))?;
            }
            let mut line = serde_json::to_string(&record).map_err(|e| self.io(e))?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| self.io(e))?;
            f.lock().map_err(|e| self.io(e))?;
            let written = f.write_all(line.as_bytes()).and_then(|_| f.flush()).and_then(|_| f.sync_data());
            let _ = f.unlock();
            written.map_err(|e| self.io(e))?;
        }
        let id = record.id.clone();
        self.records.write().unwrap_or_else(|p| p.into_inner()).push(record);
        Ok(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.read().unwrap_or_else(|p| p.into_inner()).iter().any(|r| r.id == id)
    }

    /// Records passing `filter`, in insertion order.
    pub fn scan(&self, filter: &ScanFilter) -> Vec<DbRecord> {
        self.records.read().unwrap_or_else(|p| p.into_inner()).iter().filter(|r| filter.matches(r)).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
