//! One JSON document per session plus an `index.json` summary, all written
//! with write-then-rename so a crash never leaves a half-written file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use improv_core::story::{Phase, StorySession};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session store I/O on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("session document {path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("`{0}` is not a valid session id")]
    BadId(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// RFC 3339.
    pub created_at: String,
    pub phase: Phase,
    pub parts: usize,
}

pub type Index = BTreeMap<String, IndexEntry>;

fn index_entry(session: &StorySession) -> IndexEntry {
    IndexEntry {
        created_at: session.created_at.to_rfc3339(),
        phase: session.phase,
        parts: session.parts.len(),
    }
}

#[derive(Debug)]
pub struct SessionStore {
    dir: PathBuf,
    index: Mutex<Index>,
}

/// Ids become file names, so only a conservative alphabet is accepted.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("doc");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    file.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl SessionStore {
    /// Opens (creating if needed) the store and rebuilds the index from the
    /// session files on disk.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let sessions = dir.join("sessions");
        std::fs::create_dir_all(&sessions).map_err(|e| io_err(&sessions, e))?;
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"").map_err(|e| io_err(&probe, e))?;
        std::fs::remove_file(&probe).map_err(|e| io_err(&probe, e))?;

        let mut index = Index::new();
        for entry in std::fs::read_dir(&sessions).map_err(|e| io_err(&sessions, e))? {
            let path = entry.map_err(|e| io_err(&sessions, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let session = Self::read(&path)?;
            index.insert(session.id.clone(), index_entry(&session));
        }
        let store = Self {
            dir,
            index: Mutex::new(index),
        };
        store.write_index(&store.index.lock().expect("index lock"))?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join("sessions").join(format!("{id}.json"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join("index.json")
    }

    fn read(path: &Path) -> Result<StorySession, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn write_index(&self, index: &Index) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(index).expect("index serializes");
        write_atomic(&self.index_path(), &bytes)
    }

    pub fn save(&self, session: &StorySession) -> Result<(), StoreError> {
        if !valid_id(&session.id) {
            return Err(StoreError::BadId(session.id.clone()));
        }
        let mut index = self.index.lock().expect("index lock");
        write_atomic(&self.session_path(&session.id), session.to_json().as_bytes())?;
        index.insert(session.id.clone(), index_entry(session));
        self.write_index(&index)
    }

    pub fn load(&self, id: &str) -> Result<Option<StorySession>, StoreError> {
        if !valid_id(id) || !self.index.lock().expect("index lock").contains_key(id) {
            return Ok(None);
        }
        Self::read(&self.session_path(id)).map(Some)
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self) -> Index {
        self.index.lock().expect("index lock").clone()
    }

    /// Re-reads `index.json` from disk.
    pub fn read_index(&self) -> Result<Index, StoreError> {
        let path = self.index_path();
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })
    }
}
