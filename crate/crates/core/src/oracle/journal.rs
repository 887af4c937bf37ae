//! Append-only request journal, one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Fault, ImageHandle, OracleError, OracleKind, RenderRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Exhausted,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub class: ErrorClass,
    pub attempts: u32,
    pub message: String,
}

impl ErrorRecord {
    pub(crate) fn from_fault(fault: Fault, attempts: u32) -> Self {
        match fault {
            Fault::Transient(message) => Self {
                class: ErrorClass::Exhausted,
                attempts,
                message,
            },
            Fault::Fatal(message) => Self {
                class: ErrorClass::Fatal,
                attempts,
                message,
            },
            Fault::Replayed(record) => record,
        }
    }

    pub(crate) fn into_oracle_error(self, kind: OracleKind) -> OracleError {
        match self.class {
            ErrorClass::Exhausted => OracleError::Exhausted {
                kind,
                attempts: self.attempts,
                message: self.message,
            },
            ErrorClass::Fatal => OracleError::Fatal {
                kind,
                message: self.message,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Error(ErrorRecord),
}

impl<T> From<Result<T, ErrorRecord>> for Outcome<T> {
    fn from(result: Result<T, ErrorRecord>) -> Self {
        match result {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Error(e),
        }
    }
}

/// Why an image was requested. Exemplar requests of one query share a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderPurpose {
    Exemplar {
        round: u32,
        feature: String,
        option_index: usize,
    },
    Generation {
        index: usize,
    },
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalRecord {
    OracleRequest {
        kind: OracleKind,
        payload: Value,
        temperature: f64,
    },
    OracleResponse {
        kind: OracleKind,
        outcome: Outcome<Value>,
    },
    RenderRequest {
        request: RenderRequest,
        purpose: RenderPurpose,
    },
    RenderResponse {
        outcome: Outcome<ImageHandle>,
    },
    Retry {
        attempt: u32,
        reason: String,
    },
    Note {
        level: String,
        message: String,
    },
}

impl JournalRecord {
    pub fn type_name(&self) -> &'static str {
        match self {
            JournalRecord::OracleRequest { .. } => "oracle_request",
            JournalRecord::OracleResponse { .. } => "oracle_response",
            JournalRecord::RenderRequest { .. } => "render_request",
            JournalRecord::RenderResponse { .. } => "render_response",
            JournalRecord::Retry { .. } => "retry",
            JournalRecord::Note { .. } => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(flatten)]
    pub record: JournalRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

struct Inner {
    entries: Vec<JournalEntry>,
    sink: Option<BufWriter<File>>,
}

/// Shared, append-ordered journal. Clones refer to the same log.
#[derive(Clone)]
pub struct Journal {
    inner: Arc<Mutex<Inner>>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                entries: Vec::new(),
                sink: None,
            })),
        }
    }

    /// Journal mirrored to `path` (appending). Existing lines are loaded first.
    pub fn with_file(path: &Path) -> Result<Self, JournalError> {
        let entries = if path.exists() { Self::load(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                entries,
                sink: Some(BufWriter::new(file)),
            })),
        })
    }

    pub fn load(path: &Path) -> Result<Vec<JournalEntry>, JournalError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| JournalError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(entries)
    }

    pub(crate) fn append(&self, request_id: Option<u64>, record: JournalRecord) {
        let mut inner = self.inner.lock().expect("journal lock poisoned");
        let entry = JournalEntry {
            seq: inner.entries.len() as u64 + 1,
            request_id,
            record,
        };
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&entry).expect("journal entries serialize");
            if let Err(err) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                tracing::error!(%err, "failed to persist journal entry");
            }
        }
        inner.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<JournalEntry> {
        self.inner.lock().expect("journal lock poisoned").entries.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("journal lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
