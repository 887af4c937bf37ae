//! On-disk layout of one session:
//!
//! ```text
//! <dir>/meta.json       prompt, seed and engine configuration
//! <dir>/events.jsonl    interaction events, one per line
//! <dir>/journal.jsonl   oracle and render journal
//! <dir>/snapshot.json   latest session state
//! <dir>/media/          content-addressed images
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InteractionEvent, SessionState};
use crate::config::EngineConfig;
use crate::oracle::{Journal, JournalEntry, JournalError, MediaStore};

pub const META_FILE: &str = "meta.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const MEDIA_DIR: &str = "media";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub initial_prompt: String,
    pub config: EngineConfig,
    pub first_request_id: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} is not a session directory (missing {META_FILE})")]
    NotASession(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Journal(#[from] JournalError),
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SessionStore {
    /// Create (or reuse) a session directory.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let media = dir.join(MEDIA_DIR);
        fs::create_dir_all(&media).map_err(io_err(&media))?;
        Ok(Self { dir })
    }

    /// Open an existing session directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if !dir.join(META_FILE).is_file() {
            return Err(StoreError::NotASession(dir));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL_FILE)
    }

    /// Journal that appends to this session's journal file.
    pub fn journal(&self) -> Result<Journal, StoreError> {
        Ok(Journal::with_file(&self.journal_path())?)
    }

    pub fn journal_entries(&self) -> Result<Vec<JournalEntry>, StoreError> {
        let path = self.journal_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(Journal::load(&path)?)
    }

    pub fn media(&self) -> Result<MediaStore, StoreError> {
        let path = self.dir.join(MEDIA_DIR);
        MediaStore::new(&path).map_err(io_err(&path))
    }

    pub fn write_meta(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        self.write_atomic(META_FILE, &serde_json::to_vec_pretty(meta).expect("meta serializes"))
    }

    pub fn read_meta(&self) -> Result<SessionMeta, StoreError> {
        self.read_json(META_FILE)
    }

    pub fn append_event(&self, event: &InteractionEvent) -> Result<(), StoreError> {
        let path = self.dir.join(EVENTS_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let line = serde_json::to_string(event).expect("events serialize");
        writeln!(file, "{line}")
            .and_then(|_| file.sync_data())
            .map_err(io_err(&path))
    }

    pub fn read_events(&self) -> Result<Vec<InteractionEvent>, StoreError> {
        let path = self.dir.join(EVENTS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                message: format!("line {}: {e}", i + 1),
            })?;
            events.push(event);
        }
        Ok(events)
    }

    pub fn write_snapshot(&self, state: &SessionState) -> Result<(), StoreError> {
        self.write_atomic(
            SNAPSHOT_FILE,
            &serde_json::to_vec_pretty(state).expect("state serializes"),
        )
    }

    pub fn read_snapshot(&self) -> Result<Option<SessionState>, StoreError> {
        if !self.dir.join(SNAPSHOT_FILE).exists() {
            return Ok(None);
        }
        self.read_json(SNAPSHOT_FILE).map(Some)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, StoreError> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let write = || -> std::io::Result<()> {
            let mut file = File::create(&tmp)?;
            file.write_all(bytes)?;
            file.sync_data()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(io_err(&path))
    }
}
