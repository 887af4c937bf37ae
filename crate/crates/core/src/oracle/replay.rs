//! Backends that answer from a recorded journal instead of a live service.
//!
//! Requests are matched by request id; the replayed request must carry the same
//! kind and payload (or prompt, seed and parameters) as the recorded one,
//! otherwise the attempt fails with a divergence fault.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::{
    canonical_json, Fault, ImageHandle, JournalEntry, JournalRecord, LanguageBackend, MediaStore, OracleKind,
    OracleRequest, Outcome, RenderBackend, RenderRequest,
};

#[derive(Default)]
struct Recorded {
    oracle: HashMap<u64, (OracleKind, String, Option<Outcome<Value>>)>,
    render: HashMap<u64, (RenderRequest, Option<Outcome<ImageHandle>>)>,
}

/// Shared replay source; hand out [`JournalReplay::language`] and
/// [`JournalReplay::renderer`] to a [`super::Clients`].
#[derive(Clone)]
pub struct JournalReplay {
    recorded: Arc<Recorded>,
    divergences: Arc<Mutex<Vec<String>>>,
}

impl JournalReplay {
    pub fn new(entries: &[JournalEntry]) -> Self {
        let mut recorded = Recorded::default();
        for entry in entries {
            let Some(id) = entry.request_id else { continue };
            match &entry.record {
                JournalRecord::OracleRequest { kind, payload, .. } => {
                    recorded.oracle.insert(id, (*kind, canonical_json(payload), None));
                }
                JournalRecord::OracleResponse { outcome, .. } => {
                    if let Some(slot) = recorded.oracle.get_mut(&id) {
                        slot.2 = Some(outcome.clone());
                    }
                }
                JournalRecord::RenderRequest { request, .. } => {
                    recorded.render.insert(id, (request.clone(), None));
                }
                JournalRecord::RenderResponse { outcome } => {
                    if let Some(slot) = recorded.render.get_mut(&id) {
                        slot.1 = Some(outcome.clone());
                    }
                }
                JournalRecord::Retry { .. } | JournalRecord::Note { .. } => {}
            }
        }
        Self {
            recorded: Arc::new(recorded),
            divergences: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn language(&self) -> Arc<dyn LanguageBackend> {
        Arc::new(self.clone())
    }

    pub fn renderer(&self) -> Arc<dyn RenderBackend> {
        Arc::new(ReplayRenderer(self.clone()))
    }

    /// Human-readable descriptions of every request that did not match the recording.
    pub fn divergences(&self) -> Vec<String> {
        self.divergences.lock().expect("divergence lock").clone()
    }

    fn diverge(&self, message: String) -> Fault {
        self.divergences.lock().expect("divergence lock").push(message.clone());
        Fault::Fatal(format!("replay divergence: {message}"))
    }
}

impl LanguageBackend for JournalReplay {
    fn attempt(&self, request: &OracleRequest) -> Result<Value, Fault> {
        let Some((kind, payload, outcome)) = self.recorded.oracle.get(&request.request_id) else {
            return Err(self.diverge(format!(
                "request {} ({}) was never recorded",
                request.request_id, request.kind
            )));
        };
        if *kind != request.kind || *payload != canonical_json(&request.payload) {
            return Err(self.diverge(format!(
                "request {}: recorded {kind} {payload}, replayed {} {}",
                request.request_id,
                request.kind,
                canonical_json(&request.payload)
            )));
        }
        match outcome {
            Some(Outcome::Ok(value)) => Ok(value.clone()),
            Some(Outcome::Error(record)) => Err(Fault::Replayed(record.clone())),
            None => Err(self.diverge(format!("request {} has no recorded response", request.request_id))),
        }
    }
}

struct ReplayRenderer(JournalReplay);

impl RenderBackend for ReplayRenderer {
    fn attempt(&self, request: &RenderRequest, _media: Option<&MediaStore>) -> Result<ImageHandle, Fault> {
        let replay = &self.0;
        let Some((recorded, outcome)) = replay.recorded.render.get(&request.request_id) else {
            return Err(replay.diverge(format!("render request {} was never recorded", request.request_id)));
        };
        if recorded != request {
            return Err(replay.diverge(format!(
                "render request {}: recorded {:?}, replayed {:?}",
                request.request_id, recorded, request
            )));
        }
        match outcome {
            Some(Outcome::Ok(handle)) => Ok(handle.clone()),
            Some(Outcome::Error(record)) => Err(Fault::Replayed(record.clone())),
            None => Err(replay.diverge(format!(
                "render request {} has no recorded response",
                request.request_id
            ))),
        }
    }
}
