//! Multi-session front end used by the HTTP server.
//!
//! Each session has one writer (a mutex around the [`Session`]) and a
//! published snapshot that readers clone without waiting on the writer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use super::replay::reconstruct;
use super::store::{SessionStore, StoreError};
use super::{InteractionEvent, RequirementEdit, Session, SessionError, SessionState, Status};
use crate::config::{derive_seed, EngineConfig};
use crate::oracle::{Clients, ImageHandle, JournalReplay, LanguageBackend, RenderBackend, RetryPolicy};
use crate::query::Answer;

/// Backends shared by every session of a service.
#[derive(Clone)]
pub struct Backends {
    pub language: Arc<dyn LanguageBackend>,
    pub renderer: Arc<dyn RenderBackend>,
    pub retry: RetryPolicy,
}

impl Backends {
    fn clients_for(&self, store: &SessionStore) -> Result<Clients, StoreError> {
        Ok(Clients::new(self.language.clone(), self.renderer.clone())
            .with_retry(self.retry.clone())
            .with_journal(store.journal()?)
            .with_media(store.media()?))
    }
}

struct Slot {
    writer: Mutex<Session>,
    published: RwLock<Arc<SessionState>>,
}

impl Slot {
    fn new(session: Session) -> Self {
        let published = RwLock::new(Arc::new(session.state().clone()));
        Self {
            writer: Mutex::new(session),
            published,
        }
    }

    fn snapshot(&self) -> Arc<SessionState> {
        self.published.read().expect("snapshot lock").clone()
    }

    fn publish(&self, state: SessionState) -> Arc<SessionState> {
        let state = Arc::new(state);
        *self.published.write().expect("snapshot lock") = state.clone();
        state
    }
}

pub struct SessionService {
    root: PathBuf,
    backends: Backends,
    config: EngineConfig,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    counter: AtomicU64,
}

impl SessionService {
    /// Open the service rooted at `root`, resuming every session stored there.
    pub fn open(root: impl Into<PathBuf>, backends: Backends, config: EngineConfig) -> Result<Self, SessionError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| SessionError::Storage(format!("{}: {e}", root.display())))?;
        let service = Self {
            root,
            backends,
            config,
            sessions: RwLock::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        };
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&service.root)
            .map_err(|e| SessionError::Storage(e.to_string()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let Ok(store) = SessionStore::open(&dir) else { continue };
            match service.resume(store) {
                Ok(session) => {
                    let id = session.state().session_id.clone();
                    service
                        .sessions
                        .write()
                        .expect("session map")
                        .insert(id, Arc::new(Slot::new(session)));
                }
                Err(err) => tracing::error!(dir = %dir.display(), %err, "could not resume session"),
            }
        }
        service.counter.store(
            service.sessions.read().expect("session map").len() as u64,
            Ordering::SeqCst,
        );
        Ok(service)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Load a persisted session; a snapshot that lags the event log is rebuilt
    /// by replaying the log against the journal.
    fn resume(&self, store: SessionStore) -> Result<Session, SessionError> {
        let meta = store.read_meta()?;
        let events = store.read_events()?;
        let entries = store.journal_entries()?;
        let next_id = entries.iter().filter_map(|e| e.request_id).max().unwrap_or(0) + 1;
        let state = match store.read_snapshot()? {
            Some(snapshot) if snapshot.events.len() == events.len() => snapshot,
            _ => {
                tracing::warn!(session = %meta.session_id, "snapshot behind event log, replaying");
                let replay = JournalReplay::new(&entries);
                let clients = Clients::new(replay.language(), replay.renderer()).with_retry(RetryPolicy::immediate());
                let rebuilt = reconstruct(&meta, &events, clients)?.into_state();
                store.write_snapshot(&rebuilt)?;
                rebuilt
            }
        };
        let clients = self.backends.clients_for(&store)?;
        clients.set_next_request_id(next_id);
        Ok(Session::from_state(state, meta.config, clients, Some(store)))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn create(&self, initial_prompt: &str, seed: Option<u64>) -> Result<Arc<SessionState>, SessionError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let seed = seed.unwrap_or(self.config.seed);
        let nonce = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let id = format!(
            "s{n:05}-{:08x}",
            derive_seed(&[initial_prompt, &seed.to_string(), &nonce.to_string()]) as u32
        );
        if initial_prompt.trim().is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        let store = SessionStore::create(self.root.join(&id))?;
        let clients = self.backends.clients_for(&store)?;
        let config = EngineConfig {
            seed,
            ..self.config.clone()
        };
        let session = Session::create(id.clone(), initial_prompt, config, clients, Some(store))?;
        let slot = Arc::new(Slot::new(session));
        let state = slot.snapshot();
        self.sessions.write().expect("session map").insert(id, slot);
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionState>, SessionError> {
        Ok(self.slot(id)?.snapshot())
    }

    pub fn list(&self) -> Vec<Arc<SessionState>> {
        self.sessions
            .read()
            .expect("session map")
            .values()
            .map(|s| s.snapshot())
            .collect()
    }

    pub fn events(&self, id: &str) -> Result<Vec<InteractionEvent>, SessionError> {
        Ok(self.slot(id)?.snapshot().events.clone())
    }

    pub fn answer(&self, id: &str, answer: Answer, expected: Option<u64>) -> Result<Arc<SessionState>, SessionError> {
        self.mutate(id, expected, false, "answer", Status::Eliciting, |s| s.answer(answer))
    }

    pub fn edit(
        &self,
        id: &str,
        edits: &[RequirementEdit],
        expected: Option<u64>,
    ) -> Result<Arc<SessionState>, SessionError> {
        self.mutate(id, expected, true, "edit requirements", Status::Eliciting, |s| {
            s.edit(edits)
        })
    }

    pub fn generate(&self, id: &str, expected: Option<u64>) -> Result<Arc<SessionState>, SessionError> {
        self.mutate(id, expected, false, "generate", Status::Generating, |s| s.generate())
    }

    pub fn close(&self, id: &str) -> Result<Arc<SessionState>, SessionError> {
        self.mutate(id, None, true, "close", Status::Closed, |s| s.close())
    }

    /// Resolve a media handle against every session's media directory.
    pub fn media_path(&self, handle: &ImageHandle) -> Option<PathBuf> {
        if !handle.is_well_formed() {
            return None;
        }
        let sessions = self.sessions.read().expect("session map");
        sessions.keys().find_map(|id| {
            let path = self.root.join(id).join(super::store::MEDIA_DIR).join(handle.as_str());
            path.is_file().then_some(path)
        })
    }

    /// Run one operation under the session's writer lock.
    ///
    /// `queue` operations wait for a busy writer; the others are rejected with
    /// the published (in-progress) status.
    fn mutate(
        &self,
        id: &str,
        expected: Option<u64>,
        queue: bool,
        op: &'static str,
        busy: Status,
        apply: impl FnOnce(&mut Session) -> Result<(), SessionError>,
    ) -> Result<Arc<SessionState>, SessionError> {
        let slot = self.slot(id)?;
        let mut session = if queue {
            slot.writer.lock().expect("session writer poisoned")
        } else {
            match slot.writer.try_lock() {
                Ok(guard) => guard,
                Err(TryLockError::WouldBlock) => {
                    return Err(SessionError::WrongState {
                        op,
                        status: slot.snapshot().status,
                    })
                }
                Err(TryLockError::Poisoned(_)) => panic!("session writer poisoned"),
            }
        };
        if let Some(expected) = expected {
            let actual = session.state().revision;
            if expected != actual {
                return Err(SessionError::RevisionConflict { expected, actual });
            }
        }
        if session.state().status == Status::Closed {
            return Err(SessionError::WrongState {
                op,
                status: Status::Closed,
            });
        }
        let mut interim = session.state().clone();
        interim.status = busy;
        slot.publish(interim);
        let result = apply(&mut session);
        let state = slot.publish(session.state().clone());
        result.map(|_| state)
    }
}
