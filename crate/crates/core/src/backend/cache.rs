//! Append-only response cache, one JSON record per line. On load the last
//! record for a key wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::types::TokenTopK;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend_id: String,
    pub prompt_hash: String,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub backend_id: String,
    pub prompt_hash: String,
    pub top_k: usize,
    pub response: TokenTopK,
    pub fetched_at: DateTime<Utc>,
}

impl CacheEntry {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            backend_id: self.backend_id.clone(),
            prompt_hash: self.prompt_hash.clone(),
            top_k: self.top_k,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    backend_id: String,
    prompt_hash: String,
    top_k: usize,
    entries: Vec<(String, f64)>,
    fetched_at: String,
}

impl From<&CacheEntry> for Record {
    fn from(e: &CacheEntry) -> Self {
        Record {
            backend_id: e.backend_id.clone(),
            prompt_hash: e.prompt_hash.clone(),
            top_k: e.top_k,
            entries: e.response.entries().to_vec(),
            fetched_at: e.fetched_at.to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

impl TryFrom<Record> for CacheEntry {
    type Error = String;

    fn try_from(r: Record) -> Result<Self, String> {
        let fetched_at = DateTime::parse_from_rfc3339(&r.fetched_at)
            .map_err(|e| format!("fetched_at: {e}"))?
            .with_timezone(&Utc);
        let response = TokenTopK::new(r.entries, r.prompt_hash.clone()).map_err(|e| e.to_string())?;
        Ok(CacheEntry {
            backend_id: r.backend_id,
            prompt_hash: r.prompt_hash,
            top_k: r.top_k,
            response,
            fetched_at,
        })
    }
}

pub fn encode_entry(entry: &CacheEntry) -> String {
    serde_json::to_string(&Record::from(entry)).expect("cache records always serialize")
}

pub fn decode_entry(line: &str) -> Result<CacheEntry, String> {
    let record: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    CacheEntry::try_from(record)
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new records to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| BackendError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry = decode_entry(&line)
                    .map_err(|e| BackendError::Cache(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
                entries.insert(entry.key(), entry);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<TokenTopK> {
        self.entries.read().unwrap().get(key).map(|e| e.response.clone())
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let mut line = encode_entry(&entry);
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        self.entries.write().unwrap().insert(entry.key(), entry);
        Ok(())
    }
}
