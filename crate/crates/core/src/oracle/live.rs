//! HTTP backends: an OpenAI-compatible chat-completions oracle and a
//! Fal-style text-to-image endpoint.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Fault, ImageHandle, LanguageBackend, MediaStore, OracleKind, OracleRequest, RenderBackend, RenderRequest};

/// Minimal blocking HTTP surface so the backends can be exercised without a network.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, auth: Option<(&str, &str)>, body: &Value, timeout: Duration)
        -> Result<Value, Fault>;

    fn get_bytes(&self, url: &str, timeout: Duration) -> Result<(Vec<u8>, Option<String>), Fault>;
}

/// reqwest-backed transport. The client is built lazily on first use so the
/// transport can be constructed inside an async runtime.
#[derive(Default)]
pub struct ReqwestTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl ReqwestTransport {
    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(reqwest::blocking::Client::new)
    }
}

fn classify(err: reqwest::Error) -> Fault {
    if err.is_timeout() || err.is_connect() || err.is_request() {
        Fault::Transient(err.to_string())
    } else {
        Fault::Fatal(err.to_string())
    }
}

fn classify_status(status: reqwest::StatusCode, body: String) -> Fault {
    let message = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    if status.as_u16() == 429 || status.is_server_error() {
        Fault::Transient(message)
    } else {
        Fault::Fatal(message)
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        auth: Option<(&str, &str)>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, Fault> {
        let mut builder = self.client().post(url).timeout(timeout).json(body);
        if let Some((header, value)) = auth {
            builder = builder.header(header, value);
        }
        let response = builder.send().map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(classify_status(status, response.text().unwrap_or_default()));
        }
        response
            .json()
            .map_err(|e| Fault::Fatal(format!("invalid JSON body: {e}")))
    }

    fn get_bytes(&self, url: &str, timeout: Duration) -> Result<(Vec<u8>, Option<String>), Fault> {
        let response = self.client().get(url).timeout(timeout).send().map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(classify_status(status, String::new()));
        }
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let bytes = response.bytes().map_err(classify)?;
        Ok((bytes.to_vec(), content_type))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the credential.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

impl EndpointConfig {
    fn credential(&self) -> Option<String> {
        self.credential_env.as_deref().and_then(|name| std::env::var(name).ok())
    }
}

/// Per-kind system prompt templates. Editable defaults; a directory of
/// `<kind>.txt` files overrides individual entries.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: BTreeMap<OracleKind, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        let json_rule = "Reply with a single JSON object and nothing else.";
        let mut put = |kind, text: &str| {
            templates.insert(kind, format!("{text}\n{json_rule}"));
        };
        put(OracleKind::ExtractFeatures, "You analyse an image-generation request. List the visual features the user explicitly stated as feature/value pairs. Schema: {\"requirements\": [{\"feature\": string, \"value\": string}]}.");
        put(OracleKind::ProposeFeatures, "Given these specified visual features, what other important features would help clarify the user's vision? Return only features not yet specified, most important first. Schema: {\"features\": [string]}.");
        put(OracleKind::SampleIntent, "Act as a persona who wrote this request. Propose complete, plausible intents that keep every specified feature value unchanged and fill in each listed open feature. Return `k` diverse samples. Schema: {\"samples\": [{feature: value}]}.");
        put(OracleKind::RateWeight, "Rate from 0 to 1 how strongly the given feature influences whether the final image matches the user's intent, given the specification. Schema: {\"weight\": number}.");
        put(OracleKind::OptionValues, "Propose short, mutually distinct values for the given feature that together partition its plausible domain for this request. Schema: {\"options\": [string]}.");
        put(OracleKind::Guidelines, "Write concise prompt-engineering guidelines specific to the described text-to-image model. Schema: {\"guidelines\": string}.");
        put(OracleKind::Synthesize, "Follow the meta-prompt and guidelines to write one prompt for the target model that incorporates every listed requirement. Schema: {\"prompt\": string}.");
        put(OracleKind::SimulateAnswer, "You are a user with the given target. Think step by step about which option best matches the target, then answer. Schema: {\"reasoning\": string, \"answer\": {\"option_index\": integer} | {\"other_text\": string}}.");
        put(OracleKind::ConfirmParaphrase, "For each requirement, decide whether the prompt expresses its value, possibly paraphrased. Schema: {\"covered\": [feature]}.");
        Self { templates }
    }
}

impl PromptTemplates {
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut templates = Self::default();
        for kind in OracleKind::ALL {
            let path = dir.join(format!("{}.txt", kind.as_str()));
            if path.exists() {
                templates.templates.insert(kind, std::fs::read_to_string(path)?);
            }
        }
        Ok(templates)
    }

    pub fn get(&self, kind: OracleKind) -> &str {
        self.templates.get(&kind).map(String::as_str).unwrap_or("")
    }
}

pub struct LiveLanguageBackend {
    config: EndpointConfig,
    templates: PromptTemplates,
    transport: Arc<dyn HttpTransport>,
    batch: bool,
}

impl LiveLanguageBackend {
    pub fn new(config: EndpointConfig, templates: PromptTemplates, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            config,
            templates,
            transport,
            batch: true,
        }
    }

    pub fn without_batching(mut self) -> Self {
        self.batch = false;
        self
    }
}

impl LanguageBackend for LiveLanguageBackend {
    fn attempt(&self, request: &OracleRequest) -> Result<Value, Fault> {
        let body = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": self.templates.get(request.kind)},
                {"role": "user", "content": super::canonical_json(&request.payload)},
            ],
        });
        let credential = self.config.credential().map(|k| format!("Bearer {k}"));
        let reply = self.transport.post_json(
            &self.config.endpoint,
            credential.as_deref().map(|v| ("Authorization", v)),
            &body,
            Duration::from_secs(self.config.timeout_secs),
        )?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Fault::Fatal("completion has no message content".into()))?;
        // Unparseable content is passed through so schema validation reports it.
        Ok(serde_json::from_str(content).unwrap_or_else(|_| Value::String(content.to_string())))
    }

    fn supports_batch(&self) -> bool {
        self.batch
    }
}

pub struct LiveRenderBackend {
    config: EndpointConfig,
    transport: Arc<dyn HttpTransport>,
}

impl LiveRenderBackend {
    pub fn new(config: EndpointConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self { config, transport }
    }
}

fn extension_for(content_type: Option<&str>, url: &str) -> &'static str {
    match content_type.unwrap_or("") {
        "image/png" => "png",
        "image/jpeg" => "jpg",
        "image/webp" => "webp",
        _ if url.ends_with(".png") => "png",
        _ if url.ends_with(".webp") => "webp",
        _ => "jpg",
    }
}

impl RenderBackend for LiveRenderBackend {
    fn attempt(&self, request: &RenderRequest, media: Option<&MediaStore>) -> Result<ImageHandle, Fault> {
        let body = json!({
            "prompt": request.prompt,
            "seed": request.seed,
            "num_inference_steps": request.parameters.steps,
            "image_size": {"width": request.parameters.width, "height": request.parameters.height},
            "num_images": 1,
        });
        let credential = self.config.credential().map(|k| format!("Key {k}"));
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let reply = self.transport.post_json(
            &self.config.endpoint,
            credential.as_deref().map(|v| ("Authorization", v)),
            &body,
            timeout,
        )?;
        let url = reply
            .pointer("/images/0/url")
            .and_then(Value::as_str)
            .ok_or_else(|| Fault::Fatal("render reply has no image url".into()))?;
        let (bytes, content_type) = self.transport.get_bytes(url, timeout)?;
        let ext = extension_for(content_type.as_deref(), url);
        match media {
            Some(store) => store
                .store(&bytes, ext)
                .map_err(|e| Fault::Fatal(format!("media store: {e}"))),
            None => Ok(ImageHandle::for_bytes(&bytes, ext)),
        }
    }
}
