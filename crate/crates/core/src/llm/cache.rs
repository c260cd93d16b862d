//! Persistent completion cache.
//!
//! An append-only JSONL file keyed by content hash. Appends are crash-safe
//! and diff-friendly; duplicate keys resolve last-writer-wins at load. All
//! access goes through a mutex so concurrent callers observe a consistent
//! view, and a key is written at most once per process.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{CompletionRecord, LlmError};

/// Content hash of (backend namespace, model id, prompt).
pub fn cache_key(namespace: &str, model: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(namespace.as_bytes());
    hasher.update([0]);
    hasher.update(model.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

struct CacheInner {
    records: HashMap<String, CompletionRecord>,
    appender: Option<File>,
}

pub struct CompletionCache {
    path: Option<PathBuf>,
    inner: Mutex<CacheInner>,
}

impl CompletionCache {
    /// Purely in-memory cache (no persistence).
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(CacheInner {
                records: HashMap::new(),
                appender: None,
            }),
        }
    }

    /// Opens (or creates) a JSONL-backed cache.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| LlmError::Cache {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| LlmError::Cache {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CompletionRecord =
                    serde_json::from_str(&line).map_err(|e| LlmError::Cache {
                        path: path.display().to_string(),
                        reason: format!("line {}: {e}", lineno + 1),
                    })?;
                records.insert(record.cache_key.clone(), record);
            }
        } else if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| LlmError::Cache {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
            }
        }
        let appender = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Cache {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(CacheInner {
                records,
                appender: Some(appender),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        self.inner.lock().unwrap().records.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a record unless the key is already present (write-once).
    /// Returns the record that ends up cached.
    pub fn insert(&self, record: CompletionRecord) -> Result<CompletionRecord, LlmError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.records.get(&record.cache_key) {
            return Ok(existing.clone());
        }
        if let Some(file) = inner.appender.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| LlmError::Cache {
                path: self
                    .path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                reason: e.to_string(),
            })?;
            writeln!(file, "{line}").map_err(|e| LlmError::Cache {
                path: self
                    .path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                reason: e.to_string(),
            })?;
            file.flush().ok();
        }
        inner
            .records
            .insert(record.cache_key.clone(), record.clone());
        Ok(record)
    }
}
