//! Content-addressed response cache on disk.
//!
//! One JSON file per completion at `<dir>/<key[0..2]>/<key>.json`, written
//! through a temp file and renamed so a crash never leaves a torn entry.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::GatewayError;

/// One finished completion, as stored and as returned to callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub model: String,
    pub prompt: String,
    pub response_text: String,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub timestamp_unix: u64,
    /// Set on the returned copy only; never persisted as true.
    #[serde(default, skip_serializing)]
    pub from_cache: bool,
}

/// sha256 over the length-prefixed request identity.
pub fn cache_key(model: &str, temperature: f64, max_tokens: u32, prompt: &str) -> String {
    let mut h = Sha256::new();
    for part in [model.as_bytes(), &temperature.to_bits().to_le_bytes(), &max_tokens.to_le_bytes(), prompt.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub writes: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    writes: AtomicU64,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into(), hits: AtomicU64::new(0), misses: AtomicU64::new(0), writes: AtomicU64::new(0) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    /// A record whose stored key disagrees with its file name is treated as
    /// a miss.
    pub fn get(&self, key: &str) -> Result<Option<CompletionRecord>, GatewayError> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(e) => return Err(GatewayError::Cache { path, message: e.to_string() }),
        };
        let rec: CompletionRecord = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Cache { path: path.clone(), message: e.to_string() })?;
        if rec.cache_key != key {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(None);
        }
        self.hits.fetch_add(1, Ordering::Relaxed);
        Ok(Some(CompletionRecord { from_cache: true, ..rec }))
    }

    pub fn put(&self, record: &CompletionRecord) -> Result<(), GatewayError> {
        let path = self.path_for(&record.cache_key);
        let err = |message: String| GatewayError::Cache { path: path.clone(), message };
        let parent = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| err(e.to_string()))?;
        let body = serde_json::to_string_pretty(record).map_err(|e| err(e.to_string()))?;
        tmp.write_all(body.as_bytes()).map_err(|e| err(e.to_string()))?;
        tmp.persist(&path).map_err(|e| err(e.to_string()))?;
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
        }
    }
}
