//! Persistent response cache.
//!
//! Layout: `<dir>/entries/<first two hex chars>/<key>` holds the payload bytes
//! and `<dir>/index.jsonl` is an append-only list of `{key, capability}`
//! records. Entries whose file is missing are ignored on open.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::Capability;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushScope {
    All,
    Capability(Capability),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexRecord {
    key: String,
    capability: Capability,
}

#[derive(Debug, Clone)]
struct Entry {
    capability: Capability,
    payload: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, Entry>>,
    index: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            entries: RwLock::new(HashMap::new()),
            index: Mutex::new(None),
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("entries")).map_err(|e| Error::io(dir, e))?;
        let index_path = dir.join("index.jsonl");
        let mut entries = HashMap::new();
        if index_path.exists() {
            let content = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
            for line in content.lines().filter(|l| !l.trim().is_empty()) {
                let record: IndexRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Cache(format!("corrupt index line: {e}")))?;
                let path = entry_path(dir, &record.key);
                if let Ok(payload) = fs::read_to_string(&path) {
                    entries.insert(
                        record.key,
                        Entry {
                            capability: record.capability,
                            payload,
                        },
                    );
                }
            }
        }
        let index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(|e| Error::io(&index_path, e))?;
        Ok(ResponseCache {
            dir: Some(dir.to_path_buf()),
            entries: RwLock::new(entries),
            index: Mutex::new(Some(index)),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .map(|e| e.payload.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, capability: Capability) -> usize {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .values()
            .filter(|e| e.capability == capability)
            .count()
    }

    pub fn put(&self, key: &str, capability: Capability, payload: &str) -> Result<()> {
        if self
            .entries
            .read()
            .expect("cache lock poisoned")
            .contains_key(key)
        {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            let path = entry_path(dir, key);
            let parent = path.parent().expect("entry path has a parent");
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            let tmp = parent.join(format!(".{key}.tmp"));
            fs::write(&tmp, payload).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
            let line = serde_json::to_string(&IndexRecord {
                key: key.to_string(),
                capability,
            })?;
            let mut index = self.index.lock().expect("cache index lock poisoned");
            if let Some(file) = index.as_mut() {
                writeln!(file, "{line}").map_err(|e| Error::io(dir.join("index.jsonl"), e))?;
            }
        }
        self.entries.write().expect("cache lock poisoned").insert(
            key.to_string(),
            Entry {
                capability,
                payload: payload.to_string(),
            },
        );
        Ok(())
    }

    /// Evicts entries in `scope` and returns how many were removed.
    pub fn flush(&self, scope: FlushScope) -> Result<usize> {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        let doomed: Vec<String> = entries
            .iter()
            .filter(|(_, e)| match scope {
                FlushScope::All => true,
                FlushScope::Capability(c) => e.capability == c,
            })
            .map(|(k, _)| k.clone())
            .collect();
        for key in &doomed {
            entries.remove(key);
        }
        if let Some(dir) = &self.dir {
            for key in &doomed {
                let path = entry_path(dir, key);
                match fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(Error::io(path, e)),
                }
            }
            // rewrite the index so it only names surviving entries
            let index_path = dir.join("index.jsonl");
            let mut keys: Vec<(&String, &Entry)> = entries.iter().collect();
            keys.sort_by(|a, b| a.0.cmp(b.0));
            let mut body = String::new();
            for (key, entry) in keys {
                body.push_str(&serde_json::to_string(&IndexRecord {
                    key: key.clone(),
                    capability: entry.capability,
                })?);
                body.push('\n');
            }
            fs::write(&index_path, body).map_err(|e| Error::io(&index_path, e))?;
            let file = OpenOptions::new()
                .append(true)
                .open(&index_path)
                .map_err(|e| Error::io(&index_path, e))?;
            *self.index.lock().expect("cache index lock poisoned") = Some(file);
        }
        Ok(doomed.len())
    }
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    let shard = key.get(..2).unwrap_or("xx");
    dir.join("entries").join(shard).join(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = ResponseCache::open(dir.path()).unwrap();
            cache
                .put("abcd", Capability::Generate, "hello\n world")
                .unwrap();
            cache.put("ef01", Capability::Embed, "[1.0]").unwrap();
        }
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("abcd").as_deref(), Some("hello\n world"));
        assert_eq!(cache.len(), 2);
        assert_eq!(
            cache
                .flush(FlushScope::Capability(Capability::Embed))
                .unwrap(),
            1
        );
        let reopened = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert!(reopened.get("ef01").is_none());
    }

    #[test]
    fn flush_on_empty_cache() {
        let cache = ResponseCache::in_memory();
        assert_eq!(cache.flush(FlushScope::All).unwrap(), 0);
    }
}
