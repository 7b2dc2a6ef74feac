use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CompletionRequest, LlmError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: Value,
    pub response_text: String,
    pub created_at: String,
}

impl CacheEntry {
    pub fn new(key: String, request: &CompletionRequest, response_text: String) -> Self {
        CacheEntry {
            key,
            request: serde_json::from_str(&request.canonical_json()).expect("canonical json parses"),
            response_text,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

/// Append-only JSONL response cache. On load, later entries for a key
/// replace earlier ones, so appending a line invalidates a stale response.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| LlmError::CacheIo(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| LlmError::CacheIo(format!("{}:{}: {e}", path.display(), i + 1)))?;
                entries.insert(entry.key, entry.response_text);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<(), LlmError> {
        {
            let mut writer = self.writer.lock().expect("cache writer lock");
            if let Some(file) = writer.as_mut() {
                let mut line = serde_json::to_string(&entry).map_err(|e| LlmError::CacheIo(e.to_string()))?;
                line.push('\n');
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .map_err(|e| LlmError::CacheIo(e.to_string()))?;
            }
        }
        self.entries.write().expect("cache lock").insert(entry.key, entry.response_text);
        Ok(())
    }
}
