//! A scripted language oracle built from one benchmark case.
//!
//! The world answers every oracle kind the engine and the simulators use:
//! it proposes the case's intent features mixed with a few distractors, offers
//! option lists that usually contain the true value, samples persona votes
//! that are uncertain on intent features and unanimous on distractors, and
//! rates intent features above distractors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::case::BenchmarkCase;
use crate::config::derive_seed;
use crate::matcher::{MatchOutcome, OptionMatcher, TieredMatcher};
use crate::oracle::{payload_hash, OracleKind, ScriptedResponder};
use crate::text::normalize_label;

/// Feature catalog for synthetic intents. Values never contain each other
/// within a feature and never repeat across features.
pub const CATALOG: &[(&str, &[&str])] = &[
    (
        "color scheme",
        &[
            "dark blue",
            "warm orange",
            "forest green",
            "monochrome black",
            "pastel pink",
            "crimson red",
            "teal",
        ],
    ),
    (
        "art style",
        &[
            "flat minimalist",
            "watercolor",
            "vintage engraving",
            "pixel art",
            "art deco",
            "photorealistic",
        ],
    ),
    (
        "lighting",
        &["soft morning", "dramatic rim", "neon glow", "overcast", "golden hour"],
    ),
    (
        "composition",
        &["centered", "rule of thirds", "symmetrical", "close-up", "wide panorama"],
    ),
    (
        "motif",
        &["mountain", "paw print", "compass", "oak leaf", "wave", "feather"],
    ),
    (
        "typography",
        &["bold sans-serif", "hand lettered", "slab serif", "rounded geometric"],
    ),
    (
        "background",
        &["plain white", "gradient sky", "textured paper", "dark slate"],
    ),
    ("mood", &["calm", "playful", "energetic", "mysterious", "nostalgic"]),
    ("texture", &["grainy", "smooth", "brushed metal", "canvas weave"]),
    ("shape", &["circular badge", "shield", "hexagon", "square tile"]),
    ("camera angle", &["eye level", "bird's-eye", "low angle"]),
    ("era", &["1920s", "1970s retro", "futuristic", "medieval"]),
];

const FILLERS: &[&str] = &["classic", "modern", "ornate", "understated", "experimental"];

/// Prefix of every reasoning text the world produces for simulated answers.
pub const REASONING_MARKER: &str = "[sim-reasoning]";

/// Suffix the world appends to synthesized prompts.
pub const DETAIL_SUFFIX: &str = "highly detailed";

/// Suffix the world appends when rewriting a prompt for the rewrite baseline.
pub const REWRITE_SUFFIX: &str = "professional composition, sharp focus, award-winning";

#[derive(Debug, Clone)]
struct WorldFeature {
    label: String,
    /// Full ordered option list; requests for fewer options take a prefix.
    options: Vec<String>,
    /// Values outside `options`, drawn for residual votes.
    outside: Vec<String>,
    truth: Option<String>,
    weight: f64,
    /// Vote shares over `options` followed by the outside bucket.
    votes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    initial_prompt: String,
    /// Intent features and distractors in proposal order.
    features: Vec<WorldFeature>,
}

/// Tunables for [`SyntheticWorld`].
#[derive(Debug, Clone)]
pub struct WorldOptions {
    /// Distractors per world, drawn uniformly from this range.
    pub distractors: std::ops::RangeInclusive<usize>,
    /// Probability that an intent feature's true value is among its options.
    pub truth_offered: f64,
    /// Weight range for distractor features.
    pub distractor_weight: (f64, f64),
}

impl Default for WorldOptions {
    fn default() -> Self {
        Self {
            distractors: 1..=3,
            truth_offered: 0.8,
            distractor_weight: (0.02, 0.15),
        }
    }
}

fn pool_for(label: &str) -> Vec<String> {
    CATALOG
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, pool)| pool.iter().map(|v| v.to_string()).collect())
        .unwrap_or_else(|| FILLERS.iter().map(|v| v.to_string()).collect())
}

impl SyntheticWorld {
    pub fn new(case: &BenchmarkCase, seed: u64) -> Self {
        Self::with_options(case, seed, &WorldOptions::default())
    }

    pub fn with_options(case: &BenchmarkCase, seed: u64, options: &WorldOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&seed.to_string(), &case.case_id, "world"]));
        let truth = case.truth_features();
        let weights = case.weights();

        let mut features = Vec::new();
        for (label, value) in &truth {
            let mut pool = pool_for(label);
            pool.retain(|v| normalize_label(v) != normalize_label(value));
            pool.shuffle(&mut rng);
            let offered = rng.gen_bool(options.truth_offered.clamp(0.0, 1.0));
            let mut list: Vec<String> = pool.iter().take(4).cloned().collect();
            let mut outside: Vec<String> = pool.iter().skip(4).cloned().collect();
            if offered {
                let at = rng.gen_range(0..2.min(list.len() + 1));
                list.insert(at, value.clone());
            } else {
                outside.push(value.clone());
            }
            let mut votes: Vec<f64> = (0..=list.len()).map(|_| rng.gen::<f64>().powi(2) + 0.05).collect();
            let last = votes.len() - 1;
            votes[last] *= 0.3;
            let total: f64 = votes.iter().sum();
            votes.iter_mut().for_each(|v| *v /= total);
            features.push(WorldFeature {
                label: label.clone(),
                options: list,
                outside,
                truth: Some(value.clone()),
                weight: weights.get(label).copied().unwrap_or(1.0).clamp(0.0, 1.0),
                votes,
            });
        }

        let mut spare: Vec<&str> = CATALOG
            .iter()
            .map(|(l, _)| *l)
            .filter(|l| !truth.contains_key(*l))
            .collect();
        spare.shuffle(&mut rng);
        let lo = *options.distractors.start();
        let hi = (*options.distractors.end()).max(lo);
        let n = rng.gen_range(lo..=hi).min(spare.len());
        for label in spare.into_iter().take(n) {
            let mut pool = pool_for(label);
            pool.shuffle(&mut rng);
            let list: Vec<String> = pool.iter().take(4).cloned().collect();
            let mut votes = vec![0.0; list.len() + 1];
            votes[0] = 1.0;
            let (wl, wh) = options.distractor_weight;
            features.push(WorldFeature {
                label: label.to_string(),
                outside: pool.iter().skip(4).cloned().collect(),
                options: list,
                truth: None,
                weight: rng.gen_range(wl..=wh.max(wl)),
                votes,
            });
        }
        features.shuffle(&mut rng);
        Self {
            initial_prompt: case.initial_prompt.clone(),
            features,
        }
    }

    fn feature(&self, label: &str) -> Option<&WorldFeature> {
        let label = normalize_label(label);
        self.features.iter().find(|f| f.label == label)
    }

    /// Proposal order of the world's features.
    pub fn feature_order(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.label.as_str()).collect()
    }

    pub fn weight(&self, label: &str) -> Option<f64> {
        self.feature(label).map(|f| f.weight)
    }

    fn specified(payload: &Value) -> BTreeMap<String, String> {
        payload
            .get("requirements")
            .and_then(Value::as_array)
            .map(|reqs| {
                reqs.iter()
                    .filter_map(|r| {
                        Some((
                            normalize_label(r.get("feature")?.as_str()?),
                            r.get("value")?.as_str()?.to_string(),
                        ))
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn sample_value(&self, feature: &WorldFeature, rng: &mut ChaCha8Rng) -> String {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, share) in feature.votes.iter().enumerate() {
            acc += share;
            if u < acc {
                if let Some(option) = feature.options.get(i) {
                    return option.clone();
                }
                break;
            }
        }
        feature
            .outside
            .choose(rng)
            .cloned()
            .unwrap_or_else(|| "something else entirely".to_string())
    }

    fn answer(&self, payload: &Value) -> Value {
        let feature = payload.get("feature").and_then(Value::as_str).unwrap_or_default();
        let options: Vec<&str> = payload
            .get("options")
            .and_then(Value::as_array)
            .map(|o| o.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let truth = self.feature(feature).and_then(|f| f.truth.clone());
        match truth {
            Some(value) => match TieredMatcher.classify(&value, &options, true) {
                MatchOutcome::Option(i) => json!({
                    "reasoning": format!("{REASONING_MARKER} The brief asks for {value}, which option {i} shows."),
                    "answer": {"option_index": i},
                }),
                _ => json!({
                    "reasoning": format!("{REASONING_MARKER} None of the options match; the brief asks for {value}."),
                    "answer": {"other_text": value},
                }),
            },
            None => json!({
                "reasoning": format!("{REASONING_MARKER} The brief says nothing about {feature}; any option works."),
                "answer": {"option_index": 0},
            }),
        }
    }
}

impl ScriptedResponder for SyntheticWorld {
    fn respond(&self, kind: OracleKind, payload: &Value) -> Option<Value> {
        Some(match kind {
            OracleKind::ExtractFeatures => {
                let prompt = payload
                    .get("initial_prompt")
                    .and_then(Value::as_str)
                    .unwrap_or(&self.initial_prompt);
                json!({"requirements": [{"feature": "subject", "value": prompt}]})
            }
            OracleKind::ProposeFeatures => {
                let specified = Self::specified(payload);
                let max = payload.get("max_features").and_then(Value::as_u64).unwrap_or(5) as usize;
                let features: Vec<&str> = self
                    .features
                    .iter()
                    .filter(|f| !specified.contains_key(&f.label))
                    .take(max)
                    .map(|f| f.label.as_str())
                    .collect();
                json!({"features": features})
            }
            OracleKind::OptionValues => {
                let max = payload.get("max_options").and_then(Value::as_u64).unwrap_or(5) as usize;
                let label = payload.get("feature").and_then(Value::as_str).unwrap_or_default();
                let options: Vec<String> = match self.feature(label) {
                    Some(f) => f.options.iter().take(max).cloned().collect(),
                    None => FILLERS.iter().take(max).map(|v| v.to_string()).collect(),
                };
                json!({"options": options})
            }
            OracleKind::RateWeight => {
                let label = payload.get("feature").and_then(Value::as_str).unwrap_or_default();
                json!({"weight": self.weight(label).unwrap_or(0.5)})
            }
            OracleKind::SampleIntent => {
                let specified = Self::specified(payload);
                let k = payload.get("k").and_then(Value::as_u64).unwrap_or(1) as usize;
                let labels: Vec<String> = payload
                    .get("features")
                    .and_then(Value::as_array)
                    .map(|f| f.iter().filter_map(Value::as_str).map(normalize_label).collect())
                    .unwrap_or_default();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&payload_hash(payload), "persona"]));
                let samples: Vec<BTreeMap<String, String>> = (0..k)
                    .map(|_| {
                        let mut sample = specified.clone();
                        for label in &labels {
                            if let Some(f) = self.feature(label) {
                                sample.insert(label.clone(), self.sample_value(f, &mut rng));
                            }
                        }
                        sample
                    })
                    .collect();
                json!({"samples": samples})
            }
            OracleKind::Synthesize => {
                if payload.get("mode").and_then(Value::as_str) == Some("rewrite") {
                    let initial = payload
                        .get("initial_prompt")
                        .and_then(Value::as_str)
                        .unwrap_or(&self.initial_prompt);
                    json!({"prompt": format!("{initial}, {REWRITE_SUFFIX}")})
                } else {
                    let values: Vec<String> = Self::specified(payload).into_values().collect();
                    let ordered = payload
                        .get("requirements")
                        .and_then(Value::as_array)
                        .map(|reqs| {
                            reqs.iter()
                                .filter_map(|r| r.get("value").and_then(Value::as_str).map(str::to_string))
                                .collect::<Vec<_>>()
                        })
                        .unwrap_or(values);
                    json!({"prompt": format!("{}, {DETAIL_SUFFIX}", ordered.join(", "))})
                }
            }
            OracleKind::SimulateAnswer => self.answer(payload),
            OracleKind::Guidelines | OracleKind::ConfirmParaphrase => return None,
        })
    }
}
