//! Append-only session log. One JSON record per line; the in-memory sessions
//! are rebuilt by replaying the log at startup.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::engine::SessionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Record {
    Create { id: String, at: u64, config: SessionConfig },
    Rate { id: String, at: u64, item: usize, rating: u8, evoi: Option<f64> },
}

impl Record {
    pub fn session_id(&self) -> &str {
        match self {
            Self::Create { id, .. } | Self::Rate { id, .. } => id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session store {path}, line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

/// The log file, or nothing for an in-memory service.
pub struct Store {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self { path: None, file: Mutex::new(None) }
    }

    /// Opens (creating if needed) the log at `path` and returns its records.
    /// A final line without a newline is a write cut short by a crash; it is
    /// dropped and the file truncated to the last complete record.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Record>), StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut records = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(io)?);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(io)?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    tracing::warn!(line = n, "dropping incomplete trailing record in session store");
                    break;
                }
                good_len += read as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: n,
                    message: e.to_string(),
                })?;
                records.push(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if file.metadata().map_err(io)?.len() > good_len {
            file.set_len(good_len).map_err(io)?;
        }
        Ok((Self { path: Some(path), file: Mutex::new(Some(file)) }, records))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes one record and flushes it to disk before returning.
    pub fn append(&self, rec: &Record) -> std::io::Result<()> {
        let mut guard = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = guard.as_mut() {
            let mut line = serde_json::to_vec(rec).map_err(std::io::Error::other)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(id: &str, item: usize) -> Record {
        Record::Rate { id: id.into(), at: 1, item, rating: 3, evoi: Some(0.25) }
    }

    #[test]
    fn records_roundtrip_through_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let (store, recs) = Store::open(&path).unwrap();
        assert!(recs.is_empty());
        let create = Record::Create { id: "a".into(), at: 0, config: SessionConfig::default() };
        store.append(&create).unwrap();
        store.append(&rate("a", 4)).unwrap();
        drop(store);
        let (_, recs) = Store::open(&path).unwrap();
        assert_eq!(recs, vec![create, rate("a", 4)]);
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let full = serde_json::to_string(&rate("a", 1)).unwrap();
        std::fs::write(&path, format!("{full}\n{}", &full[..10])).unwrap();
        let (store, recs) = Store::open(&path).unwrap();
        assert_eq!(recs.len(), 1);
        store.append(&rate("a", 2)).unwrap();
        drop(store);
        let (_, recs) = Store::open(&path).unwrap();
        assert_eq!(recs, vec![rate("a", 1), rate("a", 2)]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(&path, "{\"op\":\"nope\"}\n").unwrap();
        assert!(matches!(Store::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
