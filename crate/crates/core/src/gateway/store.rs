use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LlmRequest, LlmResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub fingerprint: String,
    pub request: LlmRequest,
    pub response: LlmResponse,
}

/// Recorded responses keyed by request fingerprint, optionally backed by
/// an append-only `records.ndjson` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordStore {
    entries: BTreeMap<String, Record>,
    path: Option<PathBuf>,
}

impl RecordStore {
    pub fn in_memory() -> RecordStore {
        RecordStore::default()
    }

    /// Opens (or starts) a store at `path`; later inserts are appended.
    pub fn open(path: &Path) -> std::io::Result<RecordStore> {
        let mut store = RecordStore {
            entries: BTreeMap::new(),
            path: Some(path.to_path_buf()),
        };
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = serde_json::from_str(line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), i + 1),
                    )
                })?;
                store.entries.insert(record.fingerprint.clone(), record);
            }
        }
        Ok(store)
    }

    /// Loads records without keeping the file attached.
    pub fn load(path: &Path) -> std::io::Result<RecordStore> {
        let mut store = RecordStore::open(path)?;
        store.path = None;
        Ok(store)
    }

    pub fn get(&self, fingerprint: &str) -> Option<&Record> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.entries.values()
    }

    pub fn insert(&mut self, record: Record) -> std::io::Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", serde_json::to_string(&record).map_err(std::io::Error::other)?)?;
        }
        self.entries.insert(record.fingerprint.clone(), record);
        Ok(())
    }

    /// Writes every record, sorted by fingerprint, one per line.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = String::new();
        for record in self.entries.values() {
            text.push_str(&serde_json::to_string(record).map_err(std::io::Error::other)?);
            text.push('\n');
        }
        std::fs::write(path, text)
    }
}
