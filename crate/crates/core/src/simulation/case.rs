use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::CATALOG;
use super::SimulationError;

/// What the simulated user secretly wants. Exactly one variant per case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// A detailed text description of the target.
    Brief(String),
    /// Handles of target images.
    ReferenceImages(Vec<String>),
    /// Feature to value map.
    SyntheticIntent(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub initial_prompt: String,
    #[serde(default)]
    pub category: String,
    pub ground_truth: GroundTruth,
    /// Importance of each intent feature in [0, 1]; missing features weigh 1.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_weights: BTreeMap<String, f64>,
}

impl BenchmarkCase {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let invalid = |m: &str| SimulationError::InvalidCase {
            case_id: self.case_id.clone(),
            message: m.to_string(),
        };
        if self.case_id.trim().is_empty() {
            return Err(invalid("case_id is empty"));
        }
        if self.initial_prompt.trim().is_empty() {
            return Err(invalid("initial prompt is empty"));
        }
        match &self.ground_truth {
            GroundTruth::Brief(text) if text.trim().is_empty() => Err(invalid("brief is empty")),
            GroundTruth::ReferenceImages(images) if images.is_empty() => Err(invalid("no reference images")),
            GroundTruth::SyntheticIntent(intent) if intent.is_empty() => Err(invalid("synthetic intent is empty")),
            _ => Ok(()),
        }
    }

    /// Feature/value truth usable by coverage metrics. Briefs written as
    /// `feature: value` lines also yield one.
    pub fn truth_features(&self) -> BTreeMap<String, String> {
        match &self.ground_truth {
            GroundTruth::SyntheticIntent(intent) => intent
                .iter()
                .map(|(f, v)| (crate::text::normalize_label(f), v.clone()))
                .collect(),
            GroundTruth::Brief(text) => crate::metrics::FeatureCoverageScorer::parse_truth(text),
            GroundTruth::ReferenceImages(_) => BTreeMap::new(),
        }
    }

    /// Text the prompt is compared against for similarity scores.
    pub fn reference_text(&self) -> String {
        match &self.ground_truth {
            GroundTruth::Brief(text) => text.clone(),
            GroundTruth::SyntheticIntent(intent) => {
                let mut parts = vec![self.initial_prompt.clone()];
                parts.extend(intent.values().cloned());
                parts.join(", ")
            }
            GroundTruth::ReferenceImages(_) => self.initial_prompt.clone(),
        }
    }

    /// Weight of every truth feature, defaulting to 1.
    pub fn weights(&self) -> BTreeMap<String, f64> {
        self.truth_features()
            .into_keys()
            .map(|f| {
                let w = self.feature_weights.get(&f).copied().unwrap_or(1.0);
                (f, w)
            })
            .collect()
    }
}

/// Read cases from a JSON file holding one case or an array of cases, or
/// from JSON lines.
pub fn load_cases(path: &Path) -> Result<Vec<BenchmarkCase>, SimulationError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimulationError::Io(format!("{}: {e}", path.display())))?;
    let malformed = |e: serde_json::Error| SimulationError::Io(format!("{}: {e}", path.display()));
    let trimmed = text.trim_start();
    let cases: Vec<BenchmarkCase> = if trimmed.starts_with('[') {
        serde_json::from_str(&text).map_err(malformed)?
    } else if let Ok(one) = serde_json::from_str::<BenchmarkCase>(&text) {
        vec![one]
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(malformed)?
    };
    for case in &cases {
        case.validate()?;
    }
    Ok(cases)
}

const SUBJECTS: &[(&str, &str)] = &[
    ("logo design", "a logo for a hiking club"),
    ("poster", "a poster for a jazz festival"),
    ("book cover", "a book cover for a detective novel"),
    ("app icon", "an app icon for a meditation app"),
    ("packaging", "a label for a craft coffee roaster"),
    ("mascot", "a mascot for a robotics team"),
    ("banner", "a banner for a farmers market"),
    ("illustration", "an illustration of a harbor town"),
];

/// Synthetic-intent cases with `features` truth features each (drawn from
/// the catalog) and skewed importance weights.
pub fn generate_cases(n: usize, seed: u64, features: std::ops::RangeInclusive<usize>) -> Vec<BenchmarkCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = (*features.end()).min(CATALOG.len());
    let min = (*features.start()).clamp(1, max);
    (0..n)
        .map(|i| {
            let (category, prompt) = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
            let f = rng.gen_range(min..=max);
            let mut picks: Vec<usize> = (0..CATALOG.len()).collect();
            picks.shuffle(&mut rng);
            let mut intent = BTreeMap::new();
            let mut weights = BTreeMap::new();
            for &idx in picks.iter().take(f) {
                let (label, pool) = CATALOG[idx];
                intent.insert(label.to_string(), pool[rng.gen_range(0..pool.len())].to_string());
                let u: f64 = rng.gen();
                weights.insert(label.to_string(), 0.3 + 0.7 * u * u * u);
            }
            BenchmarkCase {
                case_id: format!("syn-{:03}", i + 1),
                initial_prompt: prompt.to_string(),
                category: category.to_string(),
                ground_truth: GroundTruth::SyntheticIntent(intent),
                feature_weights: weights,
            }
        })
        .collect()
}
