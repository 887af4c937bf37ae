//! Clients for the two external generative services: a language oracle and a
//! text-to-image renderer.
//!
//! Every request goes through [`Clients`], which assigns session-unique request
//! ids, applies the retry policy, validates oracle replies against the schema of
//! their kind, and appends request and response records to the session
//! [`Journal`] before the caller sees the result. Backends only implement a
//! single attempt.

pub mod journal;
pub mod live;
pub mod media;
pub mod replay;
pub mod schema;
pub mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use journal::{
    ErrorClass, ErrorRecord, Journal, JournalEntry, JournalError, JournalRecord, Outcome, RenderPurpose,
};
pub use media::{ImageHandle, MediaStore};
pub use replay::JournalReplay;
pub use schema::{OracleReply, RawAnswer};
pub use scripted::{generic_default, Fixture, FixtureError, ScriptedBackend, ScriptedRenderer, ScriptedResponder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    ExtractFeatures,
    ProposeFeatures,
    SampleIntent,
    RateWeight,
    OptionValues,
    Guidelines,
    Synthesize,
    SimulateAnswer,
    ConfirmParaphrase,
}

impl OracleKind {
    pub const ALL: [OracleKind; 9] = [
        OracleKind::ExtractFeatures,
        OracleKind::ProposeFeatures,
        OracleKind::SampleIntent,
        OracleKind::RateWeight,
        OracleKind::OptionValues,
        OracleKind::Guidelines,
        OracleKind::Synthesize,
        OracleKind::SimulateAnswer,
        OracleKind::ConfirmParaphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::ExtractFeatures => "extract_features",
            OracleKind::ProposeFeatures => "propose_features",
            OracleKind::SampleIntent => "sample_intent",
            OracleKind::RateWeight => "rate_weight",
            OracleKind::OptionValues => "option_values",
            OracleKind::Guidelines => "guidelines",
            OracleKind::Synthesize => "synthesize",
            OracleKind::SimulateAnswer => "simulate_answer",
            OracleKind::ConfirmParaphrase => "confirm_paraphrase",
        }
    }

    /// Sampling temperature hint sent to live backends.
    pub fn default_temperature(self) -> f64 {
        match self {
            OracleKind::SampleIntent | OracleKind::OptionValues => 1.0,
            OracleKind::ProposeFeatures => 0.7,
            _ => 0.0,
        }
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub request_id: u64,
    pub kind: OracleKind,
    pub payload: Value,
    pub temperature: f64,
}

/// Generation parameters shared by every render request. All fields are explicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderParameters {
    pub steps: u32,
    pub width: u32,
    pub height: u32,
}

impl Default for RenderParameters {
    fn default() -> Self {
        Self {
            steps: 8,
            width: 1024,
            height: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub request_id: u64,
    pub prompt: String,
    pub seed: u64,
    pub parameters: RenderParameters,
}

/// Result of one backend attempt that did not produce a reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Worth retrying (timeouts, 429, 5xx).
    Transient(String),
    Fatal(String),
    /// A failure recorded in a journal, reproduced verbatim during replay.
    Replayed(ErrorRecord),
}

pub trait LanguageBackend: Send + Sync {
    fn attempt(&self, request: &OracleRequest) -> Result<Value, Fault>;

    /// Whether `sample_intent` may request all K samples in one call.
    fn supports_batch(&self) -> bool {
        true
    }
}

pub trait RenderBackend: Send + Sync {
    fn attempt(&self, request: &RenderRequest, media: Option<&MediaStore>) -> Result<ImageHandle, Fault>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("{kind} request failed after {attempts} attempt(s): {message}")]
    Exhausted {
        kind: OracleKind,
        attempts: u32,
        message: String,
    },
    #[error("{kind} request failed: {message}")]
    Fatal { kind: OracleKind, message: String },
    #[error("{kind} response violates schema: {message}")]
    Schema { kind: OracleKind, message: String },
}

impl OracleError {
    pub fn is_schema(&self) -> bool {
        matches!(self, OracleError::Schema { .. })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("render prompt is empty")]
    EmptyPrompt,
    #[error("render failed after {attempts} attempt(s): {message}")]
    Failed { attempts: u32, message: String },
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            max_retries: 2,
            base_delay: Duration::ZERO,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

/// Session-scoped handle over both backends and the request journal.
#[derive(Clone)]
pub struct Clients {
    language: Arc<dyn LanguageBackend>,
    renderer: Arc<dyn RenderBackend>,
    journal: Journal,
    retry: RetryPolicy,
    media: Option<MediaStore>,
    next_id: Arc<AtomicU64>,
}

impl Clients {
    pub fn new(language: Arc<dyn LanguageBackend>, renderer: Arc<dyn RenderBackend>) -> Self {
        Self {
            language,
            renderer,
            journal: Journal::in_memory(),
            retry: RetryPolicy::default(),
            media: None,
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn with_journal(mut self, journal: Journal) -> Self {
        self.journal = journal;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_media(mut self, media: MediaStore) -> Self {
        self.media = Some(media);
        self
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn media(&self) -> Option<&MediaStore> {
        self.media.as_ref()
    }

    pub fn supports_batch(&self) -> bool {
        self.language.supports_batch()
    }

    fn next_request_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::SeqCst)
    }

    /// Id the next request will receive.
    pub fn peek_request_id(&self) -> u64 {
        self.next_id.load(Ordering::SeqCst)
    }

    /// Continue numbering from `id`; used when resuming or replaying a session.
    pub fn set_next_request_id(&self, id: u64) {
        self.next_id.store(id.max(1), Ordering::SeqCst);
    }

    pub fn note(&self, level: &str, message: impl Into<String>) {
        let message = message.into();
        tracing::debug!(level, %message, "journal note");
        self.journal.append(
            None,
            JournalRecord::Note {
                level: level.to_string(),
                message,
            },
        );
    }

    /// Send one oracle request and validate the reply against the schema of its kind.
    pub fn call(&self, kind: OracleKind, payload: Value) -> Result<OracleReply, OracleError> {
        let request = OracleRequest {
            request_id: self.next_request_id(),
            kind,
            payload,
            temperature: kind.default_temperature(),
        };
        self.journal.append(
            Some(request.request_id),
            JournalRecord::OracleRequest {
                kind,
                payload: request.payload.clone(),
                temperature: request.temperature,
            },
        );
        let (outcome, retries) = with_retries(&self.retry, |_| self.language.attempt(&request));
        for (attempt, reason) in &retries {
            self.journal.append(
                Some(request.request_id),
                JournalRecord::Retry {
                    attempt: *attempt,
                    reason: reason.clone(),
                },
            );
        }
        let outcome = outcome.map_err(|err| ErrorRecord::from_fault(err, retries.len() as u32 + 1));
        self.journal.append(
            Some(request.request_id),
            JournalRecord::OracleResponse {
                kind,
                outcome: Outcome::from(outcome.clone()),
            },
        );
        match outcome {
            Ok(value) => schema::parse(kind, &value),
            Err(record) => Err(record.into_oracle_error(kind)),
        }
    }

    pub fn render(
        &self,
        prompt: &str,
        seed: u64,
        parameters: &RenderParameters,
        purpose: RenderPurpose,
    ) -> Result<ImageHandle, RenderError> {
        self.render_batch(&[(prompt.to_string(), purpose)], seed, parameters)
            .pop()
            .expect("one request yields one result")
    }

    /// Render several prompts with one shared seed and parameter record.
    ///
    /// Requests run concurrently; results and journal records are ordered by
    /// input position.
    pub fn render_batch(
        &self,
        prompts: &[(String, RenderPurpose)],
        seed: u64,
        parameters: &RenderParameters,
    ) -> Vec<Result<ImageHandle, RenderError>> {
        let mut requests = Vec::with_capacity(prompts.len());
        for (prompt, purpose) in prompts {
            if prompt.trim().is_empty() {
                requests.push(None);
                continue;
            }
            let request = RenderRequest {
                request_id: self.next_request_id(),
                prompt: prompt.clone(),
                seed,
                parameters: parameters.clone(),
            };
            self.journal.append(
                Some(request.request_id),
                JournalRecord::RenderRequest {
                    request: request.clone(),
                    purpose: purpose.clone(),
                },
            );
            requests.push(Some(request));
        }

        let attempts: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|request| {
                    request.as_ref().map(|request| {
                        scope.spawn(move || {
                            with_retries(&self.retry, |_| self.renderer.attempt(request, self.media.as_ref()))
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.map(|h| h.join().expect("render worker panicked")))
                .collect()
        });

        requests
            .iter()
            .zip(attempts)
            .map(|(request, attempt)| {
                let (Some(request), Some((outcome, retries))) = (request, attempt) else {
                    return Err(RenderError::EmptyPrompt);
                };
                for (n, reason) in &retries {
                    self.journal.append(
                        Some(request.request_id),
                        JournalRecord::Retry {
                            attempt: *n,
                            reason: reason.clone(),
                        },
                    );
                }
                let outcome = outcome.map_err(|err| ErrorRecord::from_fault(err, retries.len() as u32 + 1));
                self.journal.append(
                    Some(request.request_id),
                    JournalRecord::RenderResponse {
                        outcome: Outcome::from(outcome.clone()),
                    },
                );
                outcome.map_err(|record| RenderError::Failed {
                    attempts: record.attempts,
                    message: record.message,
                })
            })
            .collect()
    }
}

/// Runs `attempt` until success, a non-transient fault, or the retry budget is spent.
/// Returns the final outcome and the (attempt number, reason) of each retry taken.
fn with_retries<T>(
    policy: &RetryPolicy,
    mut attempt: impl FnMut(u32) -> Result<T, Fault>,
) -> (Result<T, Fault>, Vec<(u32, String)>) {
    let mut retries = Vec::new();
    let mut n = 0;
    loop {
        match attempt(n) {
            Err(Fault::Transient(reason)) if n < policy.max_retries => {
                n += 1;
                tracing::warn!(attempt = n, %reason, "transient backend failure, retrying");
                retries.push((n, reason));
                let delay = policy.delay(n);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            other => return (other, retries),
        }
    }
}

/// Canonical JSON text: serde_json maps are key-sorted, so this is stable.
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("json values always serialize")
}

pub fn payload_hash(value: &Value) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::scripted::{ScriptedBackend, ScriptedRenderer};
    use serde_json::json;
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<u32>,
    }

    impl LanguageBackend for Flaky {
        fn attempt(&self, _request: &OracleRequest) -> Result<Value, Fault> {
            let mut left = self.failures.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(Fault::Transient("503 service unavailable".into()));
            }
            Ok(json!({"weight": 0.4}))
        }
    }

    fn flaky(failures: u32) -> Clients {
        Clients::new(
            Arc::new(Flaky {
                failures: Mutex::new(failures),
            }),
            Arc::new(ScriptedRenderer::default()),
        )
        .with_retry(RetryPolicy::immediate())
    }

    #[test]
    fn two_transient_failures_then_success() {
        let clients = flaky(2);
        let reply = clients
            .call(OracleKind::RateWeight, json!({"feature": "motif"}))
            .unwrap();
        assert_eq!(reply, OracleReply::RateWeight(0.4));
        let retries = clients
            .journal()
            .entries()
            .iter()
            .filter(|e| matches!(e.record, JournalRecord::Retry { .. }))
            .count();
        assert_eq!(retries, 2);
    }

    #[test]
    fn three_transient_failures_exhaust_the_budget() {
        let clients = flaky(3);
        let err = clients.call(OracleKind::RateWeight, json!({})).unwrap_err();
        assert!(matches!(err, OracleError::Exhausted { attempts: 3, .. }), "{err:?}");
    }

    #[test]
    fn every_request_and_response_is_journaled() {
        let clients = Clients::new(
            Arc::new(ScriptedBackend::new(false)),
            Arc::new(ScriptedRenderer::default()),
        );
        let _ = clients.call(OracleKind::ProposeFeatures, json!({"x": 1}));
        let _ = clients.render("a red cube", 7, &RenderParameters::default(), RenderPurpose::Baseline);
        let kinds: Vec<_> = clients
            .journal()
            .entries()
            .iter()
            .map(|e| e.record.type_name())
            .collect();
        assert_eq!(
            kinds,
            ["oracle_request", "oracle_response", "render_request", "render_response"]
        );
        let ids: Vec<_> = clients.journal().entries().iter().map(|e| e.request_id).collect();
        assert_eq!(ids, [Some(1), Some(1), Some(2), Some(2)]);
    }

    #[test]
    fn empty_render_prompt_is_rejected() {
        let clients = Clients::new(
            Arc::new(ScriptedBackend::new(false)),
            Arc::new(ScriptedRenderer::default()),
        );
        let err = clients
            .render("  ", 1, &RenderParameters::default(), RenderPurpose::Baseline)
            .unwrap_err();
        assert_eq!(err, RenderError::EmptyPrompt);
        assert!(clients.journal().entries().is_empty());
    }

    #[test]
    fn payload_hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(payload_hash(&a), payload_hash(&b));
    }
}
