//! Interactive elicitation sessions.
//!
//! A [`Session`] owns the specification, the active query and the generation
//! history. Every state mutation appends exactly one [`InteractionEvent`]
//! (edit batches append one per edit) and, when a store is attached, persists
//! the event and a fresh snapshot before returning.

mod replay;
mod service;
mod store;

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EngineConfig, SelectionPolicy};
use crate::intent::{
    initialize_specification, propose_feature_space, sample_intents, IntentError, Origin, PersonaConfig, Specification,
};
use crate::matcher::{OptionMatcher, TieredMatcher};
use crate::oracle::{Clients, ImageHandle, RenderPurpose};
use crate::query::{
    compute_eaug, estimate_option_distribution, generate_candidates, handle_answer, render_query_exemplars,
    select_query, Answer, CandidateQuery, QueryError, ScoredQuery, WeightCache,
};
use crate::synthesis::{elicit_guidelines, synthesize_prompt, SynthesisContext, SynthesisError, SynthesizedPrompt};
use crate::text::clean_value;

pub use replay::{projection, reconstruct, replay_dir, ReplayError, ReplayReport};
pub use service::{Backends, SessionService};
pub use store::{SessionMeta, SessionStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Eliciting,
    AwaitingAnswer,
    Generating,
    Closed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Idle => "idle",
            Status::Eliciting => "eliciting",
            Status::AwaitingAnswer => "awaiting_answer",
            Status::Generating => "generating",
            Status::Closed => "closed",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The query currently shown to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveQuery {
    pub round: u32,
    pub query: CandidateQuery,
    pub question: String,
    pub entropy: Option<f64>,
    pub eaug: Option<f64>,
    /// Seed shared by every exemplar of this round.
    pub exemplar_seed: u64,
}

/// One query-selection round: every scored candidate and the one that was asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRound {
    pub round: u32,
    pub policy: SelectionPolicy,
    pub candidates: Vec<String>,
    /// Empty unless the policy scores candidates.
    pub scored: Vec<ScoredQuery>,
    pub selected: usize,
    pub feature: String,
    pub answer: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: usize,
    pub prompt: SynthesizedPrompt,
    pub image: Option<ImageHandle>,
    pub render_error: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    SelectAnswerOption {
        round: u32,
        feature: String,
        option_index: usize,
        value: String,
    },
    ProvideOtherAnswer {
        round: u32,
        feature: String,
        text: String,
    },
    GeneratePrompt {
        index: usize,
    },
    AddRequirement {
        feature: String,
        value: String,
        batch: u64,
    },
    /// `value: None` deletes the requirement.
    ModifyRequirement {
        feature: String,
        value: Option<String>,
        batch: u64,
    },
}

impl Action {
    pub fn type_name(&self) -> &'static str {
        match self {
            Action::SelectAnswerOption { .. } => "select_answer_option",
            Action::ProvideOtherAnswer { .. } => "provide_other_answer",
            Action::GeneratePrompt { .. } => "generate_prompt",
            Action::AddRequirement { .. } => "add_requirement",
            Action::ModifyRequirement { .. } => "modify_requirement",
        }
    }

    fn batch(&self) -> Option<u64> {
        match self {
            Action::AddRequirement { batch, .. } | Action::ModifyRequirement { batch, .. } => Some(*batch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub seq: u64,
    /// Oracle request id at the start of the operation; replay resumes numbering here.
    pub first_request_id: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

/// A manual change to the specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RequirementEdit {
    Add { feature: String, value: String },
    Modify { feature: String, value: String },
    Delete { feature: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub initial_prompt: String,
    pub seed: u64,
    pub status: Status,
    /// Bumped once per accepted operation.
    pub revision: u64,
    pub specification: Specification,
    pub active_query: Option<ActiveQuery>,
    pub synthesis: SynthesisContext,
    pub weights: WeightCache,
    pub rounds: Vec<QueryRound>,
    pub generations: Vec<Generation>,
    pub events: Vec<InteractionEvent>,
    pub last_error: Option<String>,
    /// No unspecified features remained at the last preparation.
    pub exhausted: bool,
}

impl SessionState {
    pub fn answered_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.answer.is_some()).count()
    }

    pub fn latest_prompt(&self) -> Option<&SynthesizedPrompt> {
        self.generations.last().map(|g| &g.prompt)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("initial prompt is empty")]
    EmptyPrompt,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot {op} while the session is {status}")]
    WrongState { op: &'static str, status: Status },
    #[error("option index {index} out of range for {options} options")]
    InvalidOptionIndex { index: usize, options: usize },
    #[error("the Other answer is empty")]
    EmptyOtherText,
    #[error("cannot generate from an empty specification")]
    EmptySpecification,
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("revision conflict: expected {expected}, session is at {actual}")]
    RevisionConflict { expected: u64, actual: u64 },
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

impl From<StoreError> for SessionError {
    fn from(err: StoreError) -> Self {
        SessionError::Storage(err.to_string())
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn exemplar_seed(session_seed: u64, round: u32) -> u64 {
    derive_seed(&[&session_seed.to_string(), "exemplar", &round.to_string()])
}

pub struct Session {
    state: SessionState,
    config: EngineConfig,
    clients: Clients,
    matcher: Arc<dyn OptionMatcher>,
    store: Option<SessionStore>,
}

impl Session {
    /// Start a session: extract the initial specification, elicit guidelines
    /// and prepare the first query.
    ///
    /// Oracle failures leave the session idle with `last_error` set; only an
    /// empty prompt or invalid configuration is rejected.
    pub fn create(
        session_id: impl Into<String>,
        initial_prompt: &str,
        config: EngineConfig,
        clients: Clients,
        store: Option<SessionStore>,
    ) -> Result<Session, SessionError> {
        let prompt = clean_value(initial_prompt);
        if prompt.is_empty() {
            return Err(SessionError::EmptyPrompt);
        }
        config.budget.validate().map_err(SessionError::InvalidConfig)?;
        if config.persona.k == 0 {
            return Err(SessionError::InvalidConfig("persona k must be at least 1".into()));
        }
        let session_id = session_id.into();
        if let Some(store) = &store {
            store.write_meta(&SessionMeta {
                session_id: session_id.clone(),
                initial_prompt: prompt.clone(),
                config: config.clone(),
                first_request_id: clients.peek_request_id(),
            })?;
        }
        let mut session = Session {
            state: SessionState {
                session_id,
                initial_prompt: prompt.clone(),
                seed: config.seed,
                status: Status::Eliciting,
                revision: 0,
                specification: Specification::empty(),
                active_query: None,
                synthesis: config.synthesis.clone(),
                weights: WeightCache::default(),
                rounds: Vec::new(),
                generations: Vec::new(),
                events: Vec::new(),
                last_error: None,
                exhausted: false,
            },
            config,
            clients,
            matcher: Arc::new(TieredMatcher),
            store,
        };
        match initialize_specification(&session.clients, &prompt) {
            Ok(spec) => session.state.specification = spec,
            Err(IntentError::EmptyPrompt) => return Err(SessionError::EmptyPrompt),
            Err(err) => session.fail(err.to_string()),
        }
        if session.state.synthesis.guidelines.is_none() {
            session.state.synthesis = elicit_guidelines(&session.clients, &session.state.synthesis)?;
        }
        if session.state.specification.is_empty() {
            session.state.status = Status::Idle;
        } else {
            session.prepare_query();
        }
        session.persist_snapshot()?;
        Ok(session)
    }

    /// Rewrap a previously persisted state.
    pub fn from_state(
        state: SessionState,
        config: EngineConfig,
        clients: Clients,
        store: Option<SessionStore>,
    ) -> Session {
        Session {
            state,
            config,
            clients,
            matcher: Arc::new(TieredMatcher),
            store,
        }
    }

    pub fn with_matcher(mut self, matcher: Arc<dyn OptionMatcher>) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clients(&self) -> &Clients {
        &self.clients
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    pub fn into_state(self) -> SessionState {
        self.state
    }

    /// Apply an answer to the active query, then prepare the next one.
    pub fn answer(&mut self, answer: Answer) -> Result<(), SessionError> {
        self.ensure(&[Status::AwaitingAnswer], "answer")?;
        let first_request_id = self.clients.peek_request_id();
        let active = self.state.active_query.clone().ok_or(SessionError::WrongState {
            op: "answer",
            status: self.state.status,
        })?;
        let spec = handle_answer(&self.state.specification, &active.query, &answer).map_err(|err| match err {
            QueryError::InvalidOptionIndex { index, options } => SessionError::InvalidOptionIndex { index, options },
            QueryError::EmptyOtherText => SessionError::EmptyOtherText,
            other => SessionError::Query(other),
        })?;
        let action = match &answer {
            Answer::OptionIndex(i) => Action::SelectAnswerOption {
                round: active.round,
                feature: active.query.feature.clone(),
                option_index: *i,
                value: active.query.options[*i].label.clone(),
            },
            Answer::OtherText(text) => Action::ProvideOtherAnswer {
                round: active.round,
                feature: active.query.feature.clone(),
                text: clean_value(text),
            },
        };
        self.state.specification = spec;
        if let Some(round) = self.state.rounds.iter_mut().rev().find(|r| r.round == active.round) {
            round.answer = Some(answer);
        }
        self.state.last_error = None;
        self.prepare_query();
        self.commit(vec![action], first_request_id)
    }

    /// Apply a batch of manual edits atomically, then re-prepare the query.
    pub fn edit(&mut self, edits: &[RequirementEdit]) -> Result<(), SessionError> {
        if self.state.status == Status::Closed {
            return Err(SessionError::WrongState {
                op: "edit requirements",
                status: Status::Closed,
            });
        }
        if edits.is_empty() {
            return Err(SessionError::InvalidEdit("no edits given".into()));
        }
        let first_request_id = self.clients.peek_request_id();
        let batch = self.state.revision + 1;
        let mut spec = self.state.specification.clone();
        let mut actions = Vec::with_capacity(edits.len());
        for edit in edits {
            let invalid = |e: IntentError| SessionError::InvalidEdit(e.to_string());
            match edit {
                RequirementEdit::Add { feature, value } | RequirementEdit::Modify { feature, value } => {
                    let existed = spec.contains(&crate::text::normalize_label(feature));
                    spec = spec.update(feature, value, Origin::ManualEdit).map_err(invalid)?;
                    let stored = spec
                        .get(&crate::text::normalize_label(feature))
                        .expect("feature was just written");
                    let (feature, value) = (stored.feature.clone(), stored.value.clone());
                    actions.push(if matches!(edit, RequirementEdit::Add { .. }) && !existed {
                        Action::AddRequirement { feature, value, batch }
                    } else {
                        Action::ModifyRequirement {
                            feature,
                            value: Some(value),
                            batch,
                        }
                    });
                }
                RequirementEdit::Delete { feature } => {
                    spec = spec.remove(feature).map_err(invalid)?;
                    actions.push(Action::ModifyRequirement {
                        feature: crate::text::normalize_label(feature),
                        value: None,
                        batch,
                    });
                }
            }
        }
        self.state.specification = spec;
        self.state.last_error = None;
        if self.state.specification.is_empty() {
            self.state.active_query = None;
            self.state.status = Status::Idle;
        } else {
            self.prepare_query();
        }
        self.commit(actions, first_request_id)
    }

    /// Synthesize and render a prompt from the current specification.
    pub fn generate(&mut self) -> Result<(), SessionError> {
        self.ensure(&[Status::AwaitingAnswer, Status::Idle], "generate")?;
        if self.state.specification.is_empty() {
            return Err(SessionError::EmptySpecification);
        }
        let first_request_id = self.clients.peek_request_id();
        self.state.status = Status::Generating;
        let prompt = synthesize_prompt(&self.clients, &self.state.specification, &self.state.synthesis)?;
        let index = self.state.generations.len() + 1;
        let seed = self.state.seed;
        let rendered = self.clients.render(
            &prompt.text,
            seed,
            &self.config.render,
            RenderPurpose::Generation { index },
        );
        let (image, render_error) = match rendered {
            Ok(handle) => (Some(handle), None),
            Err(err) => (None, Some(err.to_string())),
        };
        self.state.generations.push(Generation {
            index,
            prompt,
            image,
            render_error,
            seed,
        });
        let keep = self
            .state
            .active_query
            .as_ref()
            .is_some_and(|q| !self.state.specification.contains(&q.query.feature));
        if keep {
            self.state.status = Status::AwaitingAnswer;
        } else {
            self.prepare_query();
        }
        self.commit(vec![Action::GeneratePrompt { index }], first_request_id)
    }

    /// Freeze the session. Not an interaction event, so it only touches
    /// status and revision; the last query stays for inspection.
    pub fn close(&mut self) -> Result<(), SessionError> {
        self.state.status = Status::Closed;
        self.state.revision += 1;
        self.persist_snapshot()
    }

    fn ensure(&self, allowed: &[Status], op: &'static str) -> Result<(), SessionError> {
        if allowed.contains(&self.state.status) {
            Ok(())
        } else {
            Err(SessionError::WrongState {
                op,
                status: self.state.status,
            })
        }
    }

    fn fail(&mut self, message: String) {
        self.clients.note("error", message.clone());
        self.state.last_error = Some(message);
    }

    fn commit(&mut self, actions: Vec<Action>, first_request_id: u64) -> Result<(), SessionError> {
        let timestamp_ms = now_ms();
        let mut fresh = Vec::with_capacity(actions.len());
        for action in actions {
            let event = InteractionEvent {
                seq: self.state.events.len() as u64 + 1,
                first_request_id,
                timestamp_ms,
                action,
            };
            self.state.events.push(event.clone());
            fresh.push(event);
        }
        self.state.revision += 1;
        if let Some(store) = &self.store {
            for event in &fresh {
                store.append_event(event)?;
            }
        }
        self.persist_snapshot()
    }

    fn persist_snapshot(&self) -> Result<(), SessionError> {
        if let Some(store) = &self.store {
            store.write_snapshot(&self.state)?;
        }
        Ok(())
    }

    /// Pick and present the next query; exhaustion or failure leaves the session idle.
    fn prepare_query(&mut self) {
        self.state.status = Status::Eliciting;
        self.state.active_query = None;
        match self.select_next() {
            Ok(Some(active)) => {
                self.state.active_query = Some(active);
                self.state.status = Status::AwaitingAnswer;
                self.state.exhausted = false;
            }
            Ok(None) => {
                self.state.status = Status::Idle;
                self.state.exhausted = true;
            }
            Err(err) => {
                self.state.status = Status::Idle;
                self.fail(format!("query preparation failed: {err}"));
            }
        }
    }

    fn select_next(&mut self) -> Result<Option<ActiveQuery>, SessionError> {
        let budget = self.config.budget.clone();
        if self.state.answered_rounds() >= budget.max_iterations as usize {
            return Ok(None);
        }
        let round = self.state.rounds.len() as u32 + 1;
        let spec = self.state.specification.clone();
        let policy = self.config.selection;
        let space = propose_feature_space(
            &self.clients,
            &spec,
            budget.max_candidates,
            &self.config.persona.seed_features,
        )?;
        if space.is_empty() {
            return Ok(None);
        }
        let (space, limit) = match policy {
            SelectionPolicy::FirstProposed => {
                let first = space.features[0].label.clone();
                (space.restricted_to(&[first.as_str()]), 1)
            }
            _ => (space, budget.max_candidates),
        };
        let candidates = match generate_candidates(
            &self.clients,
            &spec,
            &space,
            limit,
            budget.max_options,
            &mut self.state.weights,
        ) {
            Ok(c) => c,
            Err(QueryError::NoUnspecifiedFeatures) => return Ok(None),
            Err(err) => return Err(err.into()),
        };

        let mut scored = Vec::new();
        let selected = match policy {
            SelectionPolicy::Eaug => {
                let labels: Vec<&str> = candidates.iter().map(|c| c.feature.as_str()).collect();
                let persona = PersonaConfig {
                    seed: derive_seed(&[&self.state.seed.to_string(), "persona", &round.to_string()]),
                    ..self.config.persona.clone()
                };
                let batch = sample_intents(&self.clients, &spec, &space.restricted_to(&labels), persona.k, &persona)?;
                for repair in &batch.repairs {
                    self.clients.note(
                        "info",
                        format!(
                            "persona sample {} repaired `{}`: {:?} -> {}",
                            repair.sample_id, repair.feature, repair.found, repair.repaired_to
                        ),
                    );
                }
                for mut candidate in candidates.iter().cloned() {
                    estimate_option_distribution(&mut candidate, &batch.samples, self.matcher.as_ref())?;
                    scored.push(compute_eaug(&candidate)?);
                }
                select_query(&scored)?
            }
            SelectionPolicy::FirstProposed => 0,
            SelectionPolicy::UniformRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                    &self.state.seed.to_string(),
                    "uniform",
                    &round.to_string(),
                ]));
                rng.gen_range(0..candidates.len())
            }
        };

        let (mut query, entropy, eaug) = match scored.get(selected) {
            Some(s) => (s.query.clone(), Some(s.entropy), Some(s.eaug)),
            None => (candidates[selected].clone(), None, None),
        };
        let seed = exemplar_seed(self.state.seed, round);
        if self.config.render_exemplars {
            query = render_query_exemplars(
                &self.clients,
                &query,
                &spec,
                &self.state.synthesis,
                seed,
                &self.config.render,
                round,
            )?;
        }
        self.state.rounds.push(QueryRound {
            round,
            policy,
            candidates: candidates.iter().map(|c| c.feature.clone()).collect(),
            scored,
            selected,
            feature: query.feature.clone(),
            answer: None,
        });
        Ok(Some(ActiveQuery {
            round,
            question: query.question(),
            query,
            entropy,
            eaug,
            exemplar_seed: seed,
        }))
    }
}

#[cfg(test)]
mod tests;
