//! Rebuild a session from its event log against the recorded journal and
//! compare the result with the persisted snapshot.

use std::path::Path;

use serde_json::{json, Value};

use super::store::{SessionStore, StoreError};
use super::{Action, InteractionEvent, RequirementEdit, Session, SessionError, SessionMeta, SessionState};
use crate::oracle::{canonical_json, Clients, JournalReplay, RetryPolicy};
use crate::query::Answer;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0} has no snapshot to compare against")]
    MissingSnapshot(std::path::PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub events: usize,
    pub diffs: Vec<String>,
    pub divergences: Vec<String>,
}

impl ReplayReport {
    pub fn is_match(&self) -> bool {
        self.diffs.is_empty() && self.divergences.is_empty()
    }
}

/// The parts of a session state that replay must reproduce exactly.
///
/// Wall-clock timestamps, status and the revision counter are excluded.
pub fn projection(state: &SessionState) -> Value {
    let events: Vec<Value> = state
        .events
        .iter()
        .map(|e| {
            json!({
                "seq": e.seq,
                "first_request_id": e.first_request_id,
                "action": e.action,
            })
        })
        .collect();
    json!({
        "specification": state.specification,
        "active_query": state.active_query,
        "rounds": state.rounds,
        "generations": state.generations,
        "weights": state.weights,
        "synthesis": state.synthesis,
        "events": events,
    })
}

/// Re-run `events` on a fresh session built from `meta`.
pub fn reconstruct(meta: &SessionMeta, events: &[InteractionEvent], clients: Clients) -> Result<Session, SessionError> {
    clients.set_next_request_id(meta.first_request_id);
    let mut session = Session::create(
        meta.session_id.clone(),
        &meta.initial_prompt,
        meta.config.clone(),
        clients,
        None,
    )?;
    let mut i = 0;
    while i < events.len() {
        let event = &events[i];
        session.clients().set_next_request_id(event.first_request_id);
        match &event.action {
            Action::SelectAnswerOption { option_index, .. } => {
                session.answer(Answer::OptionIndex(*option_index))?;
                i += 1;
            }
            Action::ProvideOtherAnswer { text, .. } => {
                session.answer(Answer::OtherText(text.clone()))?;
                i += 1;
            }
            Action::GeneratePrompt { .. } => {
                session.generate()?;
                i += 1;
            }
            Action::AddRequirement { batch, .. } | Action::ModifyRequirement { batch, .. } => {
                let mut edits = Vec::new();
                while let Some(e) = events.get(i).filter(|e| e.action.batch() == Some(*batch)) {
                    edits.push(match &e.action {
                        Action::AddRequirement { feature, value, .. } => RequirementEdit::Add {
                            feature: feature.clone(),
                            value: value.clone(),
                        },
                        Action::ModifyRequirement {
                            feature,
                            value: Some(value),
                            ..
                        } => RequirementEdit::Modify {
                            feature: feature.clone(),
                            value: value.clone(),
                        },
                        Action::ModifyRequirement {
                            feature, value: None, ..
                        } => RequirementEdit::Delete {
                            feature: feature.clone(),
                        },
                        _ => unreachable!("filtered to edit events"),
                    });
                    i += 1;
                }
                session.edit(&edits)?;
            }
        }
    }
    Ok(session)
}

fn describe(value: &Value) -> String {
    let text = canonical_json(value);
    if text.len() > 400 {
        let cut = text.char_indices().nth(400).map(|(i, _)| i).unwrap_or(text.len());
        format!("{}...", &text[..cut])
    } else {
        text
    }
}

/// Compare two projections field by field.
pub fn diff_projections(recorded: &Value, replayed: &Value) -> Vec<String> {
    let (Some(a), Some(b)) = (recorded.as_object(), replayed.as_object()) else {
        return vec!["projection is not an object".into()];
    };
    let mut diffs = Vec::new();
    for (key, left) in a {
        let right = b.get(key).unwrap_or(&Value::Null);
        if canonical_json(left) != canonical_json(right) {
            diffs.push(format!(
                "{key}:\n  recorded: {}\n  replayed: {}",
                describe(left),
                describe(right)
            ));
        }
    }
    diffs
}

/// Replay the session stored in `dir` against its own journal.
pub fn replay_dir(dir: &Path) -> Result<ReplayReport, ReplayError> {
    let store = SessionStore::open(dir)?;
    let meta = store.read_meta()?;
    let events = store.read_events()?;
    let snapshot = store
        .read_snapshot()?
        .ok_or_else(|| ReplayError::MissingSnapshot(dir.to_path_buf()))?;
    let replay = JournalReplay::new(&store.journal_entries()?);
    let clients = Clients::new(replay.language(), replay.renderer()).with_retry(RetryPolicy::immediate());

    let mut diffs = Vec::new();
    if snapshot.events.len() != events.len() {
        diffs.push(format!(
            "event log has {} events, snapshot has {}",
            events.len(),
            snapshot.events.len()
        ));
    }
    match reconstruct(&meta, &events, clients) {
        Ok(session) => diffs.extend(diff_projections(&projection(&snapshot), &projection(session.state()))),
        Err(err) => diffs.push(format!("replay stopped: {err}")),
    }
    Ok(ReplayReport {
        events: events.len(),
        diffs,
        divergences: replay.divergences(),
    })
}
