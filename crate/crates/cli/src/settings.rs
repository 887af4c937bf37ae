//! Service and benchmark settings: a TOML file, then `ELICIT_*` environment
//! overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use elicit_core::oracle::live::EndpointConfig;
use elicit_core::EngineConfig;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "ELICIT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Fixture file consulted before the synthetic world (scripted only).
    pub fixtures: Option<PathBuf>,
    /// Seed of the synthetic world behind the scripted service backend.
    pub world_seed: u64,
    pub llm: Option<EndpointConfig>,
    pub renderer: Option<EndpointConfig>,
    /// Directory of `<kind>.txt` prompt templates for the live oracle.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub engine: EngineConfig,
    pub backend: BackendSettings,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Settings> {
        let mut settings = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Settings::default(),
        };
        settings.apply_env(|key| std::env::var(key).ok())?;
        Ok(settings)
    }

    /// Apply overrides; `lookup` receives full variable names.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        let get = |name: &str| lookup(&format!("{ENV_PREFIX}{name}"));
        fn parse<T: std::str::FromStr>(name: &str, value: String) -> anyhow::Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{ENV_PREFIX}{name}: cannot parse `{value}`"))
        }
        if let Some(v) = get("MAX_ITERATIONS") {
            self.engine.budget.max_iterations = parse("MAX_ITERATIONS", v)?;
        }
        if let Some(v) = get("MAX_CANDIDATES") {
            self.engine.budget.max_candidates = parse("MAX_CANDIDATES", v)?;
        }
        if let Some(v) = get("MAX_OPTIONS") {
            self.engine.budget.max_options = parse("MAX_OPTIONS", v)?;
        }
        if let Some(v) = get("K") {
            self.engine.persona.k = parse("K", v)?;
        }
        if let Some(v) = get("SEED") {
            self.engine.seed = parse("SEED", v)?;
        }
        if let Some(v) = get("BACKEND") {
            self.backend.kind = match v.trim() {
                "scripted" => BackendKind::Scripted,
                "live" => BackendKind::Live,
                other => bail!("{ENV_PREFIX}BACKEND: unknown backend `{other}`"),
            };
        }
        if let Some(v) = get("FIXTURES") {
            self.backend.fixtures = Some(PathBuf::from(v));
        }
        if let Some(v) = get("TEMPLATES") {
            self.backend.templates = Some(PathBuf::from(v));
        }
        endpoint_env(&mut self.backend.llm, "LLM", &get)?;
        endpoint_env(&mut self.backend.renderer, "RENDER", &get)?;
        self.engine.budget.validate().map_err(anyhow::Error::msg)?;
        if self.engine.persona.k == 0 {
            bail!("persona k must be at least 1");
        }
        Ok(())
    }
}

fn endpoint_env(
    slot: &mut Option<EndpointConfig>,
    prefix: &str,
    get: &impl Fn(&str) -> Option<String>,
) -> anyhow::Result<()> {
    let endpoint = get(&format!("{prefix}_ENDPOINT"));
    let model = get(&format!("{prefix}_MODEL"));
    let key_env = get(&format!("{prefix}_KEY_ENV"));
    if endpoint.is_none() && model.is_none() && key_env.is_none() {
        return Ok(());
    }
    let config = slot.get_or_insert_with(|| EndpointConfig {
        endpoint: String::new(),
        credential_env: None,
        model: String::new(),
        timeout_secs: 60,
    });
    if let Some(v) = endpoint {
        config.endpoint = v;
    }
    if let Some(v) = model {
        config.model = v;
    }
    if let Some(v) = key_env {
        config.credential_env = Some(v);
    }
    if config.endpoint.is_empty() {
        bail!("{ENV_PREFIX}{prefix}_ENDPOINT is required when other {prefix} settings are given");
    }
    Ok(())
}
