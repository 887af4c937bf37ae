//! Deterministic stand-ins for the language oracle and the renderer.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    payload_hash, Fault, ImageHandle, LanguageBackend, MediaStore, OracleKind, OracleRequest, RenderBackend,
    RenderRequest,
};

/// Programmatic fixture source consulted after the explicit fixture table.
pub trait ScriptedResponder: Send + Sync {
    fn respond(&self, kind: OracleKind, payload: &Value) -> Option<Value>;
}

#[derive(Debug, Clone, Deserialize)]
pub struct Fixture {
    pub kind: OracleKind,
    #[serde(default)]
    pub payload: Option<Value>,
    #[serde(default)]
    pub payload_hash: Option<String>,
    pub response: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read fixtures {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed fixture in {path}: {message}")]
    Malformed { path: String, message: String },
}

/// Fixture-driven language backend keyed by `(kind, payload hash)`.
///
/// Lookup order: exact fixture, wildcard fixture for the kind (no payload),
/// the attached responder, then (unless `strict`) a generic schema-valid default.
#[derive(Clone)]
pub struct ScriptedBackend {
    fixtures: HashMap<(OracleKind, String), Value>,
    wildcards: HashMap<OracleKind, Value>,
    strict: bool,
    batch: bool,
    responder: Option<Arc<dyn ScriptedResponder>>,
}

impl ScriptedBackend {
    pub fn new(strict: bool) -> Self {
        Self {
            fixtures: HashMap::new(),
            wildcards: HashMap::new(),
            strict,
            batch: true,
            responder: None,
        }
    }

    pub fn with_responder(mut self, responder: Arc<dyn ScriptedResponder>) -> Self {
        self.responder = Some(responder);
        self
    }

    pub fn without_batching(mut self) -> Self {
        self.batch = false;
        self
    }

    pub fn fixture(mut self, kind: OracleKind, payload: &Value, response: Value) -> Self {
        self.fixtures.insert((kind, payload_hash(payload)), response);
        self
    }

    /// Response returned for every request of `kind` without an exact fixture.
    pub fn wildcard(mut self, kind: OracleKind, response: Value) -> Self {
        self.wildcards.insert(kind, response);
        self
    }

    pub fn add_fixture(&mut self, fixture: Fixture) {
        let hash = fixture
            .payload_hash
            .or_else(|| fixture.payload.as_ref().map(payload_hash));
        match hash {
            Some(hash) => {
                self.fixtures.insert((fixture.kind, hash), fixture.response);
            }
            None => {
                self.wildcards.insert(fixture.kind, fixture.response);
            }
        }
    }

    /// Load fixtures from a JSON array or JSON-lines file.
    pub fn load_fixtures(mut self, path: &Path) -> Result<Self, FixtureError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: shown.clone(),
            source,
        })?;
        let malformed = |e: serde_json::Error| FixtureError::Malformed {
            path: shown.clone(),
            message: e.to_string(),
        };
        let fixtures: Vec<Fixture> = if text.trim_start().starts_with('[') {
            serde_json::from_str(&text).map_err(malformed)?
        } else {
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .map_err(malformed)?
        };
        for f in fixtures {
            self.add_fixture(f);
        }
        Ok(self)
    }
}

impl LanguageBackend for ScriptedBackend {
    fn attempt(&self, request: &OracleRequest) -> Result<Value, Fault> {
        let key = (request.kind, payload_hash(&request.payload));
        if let Some(v) = self.fixtures.get(&key) {
            return Ok(v.clone());
        }
        if let Some(v) = self.wildcards.get(&request.kind) {
            return Ok(v.clone());
        }
        if let Some(v) = self
            .responder
            .as_ref()
            .and_then(|r| r.respond(request.kind, &request.payload))
        {
            return Ok(v);
        }
        if self.strict {
            return Err(Fault::Fatal(format!(
                "no fixture for {} with payload hash {}",
                request.kind, key.1
            )));
        }
        Ok(generic_default(request.kind, &request.payload))
    }

    fn supports_batch(&self) -> bool {
        self.batch
    }
}

/// Minimal schema-valid reply for each kind.
pub fn generic_default(kind: OracleKind, payload: &Value) -> Value {
    match kind {
        OracleKind::ExtractFeatures => json!({"requirements": []}),
        OracleKind::ProposeFeatures => json!({"features": []}),
        OracleKind::SampleIntent => json!({"samples": []}),
        OracleKind::RateWeight => json!({"weight": 1.0}),
        OracleKind::OptionValues => json!({"options": []}),
        OracleKind::Guidelines => json!({"guidelines": crate::synthesis::GENERIC_GUIDELINES}),
        OracleKind::Synthesize => {
            let values: Vec<String> = payload
                .get("requirements")
                .and_then(Value::as_array)
                .map(|reqs| {
                    reqs.iter()
                        .filter_map(|r| r.get("value").and_then(Value::as_str))
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            let prompt = if values.is_empty() {
                payload
                    .get("initial_prompt")
                    .and_then(Value::as_str)
                    .unwrap_or("an image")
                    .to_string()
            } else {
                values.join(", ")
            };
            json!({"prompt": prompt})
        }
        OracleKind::SimulateAnswer => json!({"answer": {"option_index": 0}}),
        OracleKind::ConfirmParaphrase => json!({"covered": []}),
    }
}

/// Renderer producing a small SVG card whose bytes depend only on
/// `(prompt, seed, parameters)`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRenderer {
    /// Prompts containing any of these substrings fail fatally.
    pub fail_when_contains: Vec<String>,
}

impl ScriptedRenderer {
    pub fn failing_on(patterns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            fail_when_contains: patterns.into_iter().map(Into::into).collect(),
        }
    }

    pub fn image_bytes(request: &RenderRequest) -> Vec<u8> {
        let digest = Sha256::digest(
            format!(
                "{}\u{0}{}\u{0}{}x{}x{}",
                request.prompt,
                request.seed,
                request.parameters.steps,
                request.parameters.width,
                request.parameters.height
            )
            .as_bytes(),
        );
        let color = hex::encode(&digest[..3]);
        let label: String = request
            .prompt
            .chars()
            .take(60)
            .map(|c| match c {
                '<' | '>' | '&' | '"' => ' ',
                c => c,
            })
            .collect();
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"256\" height=\"256\">\
             <rect width=\"256\" height=\"256\" fill=\"#{color}\"/>\
             <text x=\"8\" y=\"128\" font-size=\"10\" fill=\"#fff\">{label}</text>\
             <text x=\"8\" y=\"244\" font-size=\"8\" fill=\"#fff\">seed {}</text></svg>",
            request.seed
        )
        .into_bytes()
    }
}

impl RenderBackend for ScriptedRenderer {
    fn attempt(&self, request: &RenderRequest, media: Option<&MediaStore>) -> Result<ImageHandle, Fault> {
        if self
            .fail_when_contains
            .iter()
            .any(|p| request.prompt.contains(p.as_str()))
        {
            return Err(Fault::Fatal(format!(
                "scripted render failure for request {}",
                request.request_id
            )));
        }
        let bytes = Self::image_bytes(request);
        match media {
            Some(store) => store
                .store(&bytes, "svg")
                .map_err(|e| Fault::Fatal(format!("media store: {e}"))),
            None => Ok(ImageHandle::for_bytes(&bytes, "svg")),
        }
    }
}
