//! Engine configuration: budgets, persona sampling, rendering and synthesis.

use serde::{Deserialize, Serialize};

use crate::intent::PersonaConfig;
use crate::oracle::RenderParameters;
use crate::synthesis::SynthesisContext;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_iterations: u32,
    pub max_candidates: usize,
    pub max_options: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iterations: 15,
            max_candidates: 5,
            max_options: 5,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.max_candidates == 0 {
            return Err("max_candidates must be at least 1".into());
        }
        if self.max_options < 2 {
            return Err("max_options must be at least 2".into());
        }
        Ok(())
    }
}

/// How the next query is chosen among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Maximize weight * entropy over persona votes.
    Eaug,
    /// Ask about the oracle's first proposed feature, no scoring.
    FirstProposed,
    /// Uniformly random candidate (comparison baseline).
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub budget: Budget,
    pub persona: PersonaConfig,
    pub render: RenderParameters,
    pub synthesis: SynthesisContext,
    pub selection: SelectionPolicy,
    /// Render option exemplars for every selected query.
    pub render_exemplars: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            budget: Budget::default(),
            persona: PersonaConfig::default(),
            render: RenderParameters::default(),
            synthesis: SynthesisContext::default(),
            selection: SelectionPolicy::Eaug,
            render_exemplars: true,
            seed: 0,
        }
    }
}

/// Stable 64-bit mix of labelled parts, used to derive seeds.
pub fn derive_seed(parts: &[&str]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
