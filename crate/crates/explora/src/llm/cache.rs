//! Append-only persistent response cache.
//!
//! Entries live in memory behind a mutex and are mirrored to a line-delimited
//! file so a restarted process pays zero backend calls for repeated requests.
//! Line format: `<key hex> <prompt hash hex> <JSON-escaped response>`.
//! Compaction is an offline concern; the writer only ever appends.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

struct CacheInner {
    entries: HashMap<String, String>,
    file: Option<File>,
}

pub struct ResponseCache {
    path: Option<PathBuf>,
    inner: Mutex<CacheInner>,
}

impl ResponseCache {
    /// Volatile cache for tests and dry runs.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            inner: Mutex::new(CacheInner {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Open (or create) a file-backed cache, loading existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut fields = line.splitn(3, ' ');
                let key = fields.next();
                let _prompt_hash = fields.next();
                let escaped = fields.next();
                let (Some(key), Some(escaped)) = (key, escaped) else {
                    return Err(Error::data(path, idx + 1, "malformed cache line"));
                };
                let response: String = serde_json::from_str(escaped).map_err(|e| {
                    Error::data(path, idx + 1, format!("bad response encoding: {e}"))
                })?;
                // First write wins; replays of racing duplicate inserts keep
                // the value the original writers observed.
                entries.entry(key.to_string()).or_insert(response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(CacheInner {
                entries,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    /// Insert a response, returning the canonical stored value.
    ///
    /// If the key is already present (a racing caller got there first) the
    /// existing value is returned and nothing is written.
    pub fn insert(&self, key: &str, prompt_hash: &str, response: &str) -> Result<String> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.entries.get(key) {
            return Ok(existing.clone());
        }
        if let Some(file) = inner.file.as_mut() {
            let escaped = serde_json::to_string(response)
                .map_err(|e| Error::validation(format!("unencodable response: {e}")))?;
            let line = format!("{key} {prompt_hash} {escaped}\n");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        inner.entries.insert(key.to_string(), response.to_string());
        Ok(response.to_string())
    }
}
