//! Alignment scorers. All scores are in [0, 1], higher is better.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::intent::Specification;
use crate::matcher::{OptionMatcher, TieredMatcher};
use crate::oracle::live::{EndpointConfig, HttpTransport};
use crate::oracle::Fault;
use crate::text::{contains_phrase, normalize_label, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    TextText,
    ImageImage,
    TextImage,
    FeatureCoverage,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("ground-truth intent is empty")]
    EmptyTruth,
    #[error("text to score is empty")]
    EmptyText,
    #[error("scorer `{0}` does not accept this input")]
    UnsupportedInput(String),
    #[error("unknown scorer `{0}`")]
    UnknownScorer(String),
    #[error("embedding service failed: {0}")]
    Oracle(String),
}

/// What a coverage score is computed over.
#[derive(Debug, Clone, Copy)]
pub enum CoverageTarget<'a> {
    Spec(&'a Specification),
    Prompt(&'a str),
}

fn truth_matched(target: CoverageTarget<'_>, feature: &str, value: &str, matcher: &dyn OptionMatcher) -> bool {
    match target {
        CoverageTarget::Spec(spec) => spec.get(feature).is_some_and(|r| matcher.same_value(&r.value, value)),
        CoverageTarget::Prompt(text) => contains_phrase(text, value),
    }
}

/// Fraction of ground-truth features whose value is present in the target.
pub fn score_feature_coverage(
    target: CoverageTarget<'_>,
    truth: &BTreeMap<String, String>,
    matcher: &dyn OptionMatcher,
) -> Result<f64, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let matched = truth
        .iter()
        .filter(|(f, v)| truth_matched(target, &normalize_label(f), v, matcher))
        .count();
    Ok(matched as f64 / truth.len() as f64)
}

/// Sum of the weights of matched ground-truth features.
pub fn weighted_coverage(
    target: CoverageTarget<'_>,
    truth: &BTreeMap<String, String>,
    weights: &BTreeMap<String, f64>,
    matcher: &dyn OptionMatcher,
) -> f64 {
    truth
        .iter()
        .filter(|(f, v)| truth_matched(target, &normalize_label(f), v, matcher))
        .map(|(f, _)| weights.get(&normalize_label(f)).copied().unwrap_or(0.0))
        .sum()
}

/// Bag-of-tokens embedding: each token adds 1 to bucket `sha256(token)[..8] mod dims`.
///
/// Texts with disjoint token sets score exactly 0.5 unless two of their tokens
/// collide in a bucket; with 4096 buckets the deviation for short texts is
/// bounded by the colliding share of the token mass.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedding {
    pub dims: usize,
}

impl Default for HashingEmbedding {
    fn default() -> Self {
        Self { dims: 4096 }
    }
}

impl HashingEmbedding {
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_be_bytes(head) % self.dims as u64) as usize
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        for t in tokens(text) {
            v[self.bucket(&t)] += 1.0;
        }
        v
    }
}

fn cosine_to_unit(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    ((1.0 + dot / (na * nb)) / 2.0).clamp(0.0, 1.0)
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn modality(&self) -> Modality;
    fn score_text(&self, _candidate: &str, _reference: &str) -> Result<f64, MetricError> {
        Err(MetricError::UnsupportedInput(self.name().to_string()))
    }
}

/// Text similarity as (1 + cos) / 2 over embeddings from some backend.
pub fn score_text_similarity(a: &str, b: &str, backend: &dyn Scorer) -> Result<f64, MetricError> {
    backend.score_text(a, b)
}

#[derive(Debug, Clone, Default)]
pub struct HashCosineScorer {
    pub embedding: HashingEmbedding,
}

impl Scorer for HashCosineScorer {
    fn name(&self) -> &str {
        "text_hash_cosine"
    }

    fn modality(&self) -> Modality {
        Modality::TextText
    }

    fn score_text(&self, a: &str, b: &str) -> Result<f64, MetricError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(MetricError::EmptyText);
        }
        Ok(cosine_to_unit(&self.embedding.embed(a), &self.embedding.embed(b)))
    }
}

/// Feature coverage of a prompt, with the reference given as `feature: value` lines.
#[derive(Debug, Clone, Default)]
pub struct FeatureCoverageScorer;

impl FeatureCoverageScorer {
    pub fn parse_truth(reference: &str) -> BTreeMap<String, String> {
        reference
            .lines()
            .filter_map(|l| l.split_once(':'))
            .map(|(f, v)| (normalize_label(f), v.trim().to_string()))
            .filter(|(f, v)| !f.is_empty() && !v.is_empty())
            .collect()
    }
}

impl Scorer for FeatureCoverageScorer {
    fn name(&self) -> &str {
        "feature_coverage"
    }

    fn modality(&self) -> Modality {
        Modality::FeatureCoverage
    }

    fn score_text(&self, candidate: &str, reference: &str) -> Result<f64, MetricError> {
        score_feature_coverage(
            CoverageTarget::Prompt(candidate),
            &Self::parse_truth(reference),
            &TieredMatcher,
        )
    }
}

/// Embedding-service scorer (OpenAI-style `/embeddings` endpoint).
pub struct RemoteEmbeddingScorer {
    name: String,
    config: EndpointConfig,
    transport: Arc<dyn HttpTransport>,
}

impl RemoteEmbeddingScorer {
    pub fn new(name: impl Into<String>, config: EndpointConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            name: name.into(),
            config,
            transport,
        }
    }

    fn embeddings(&self, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
        let credential = self
            .config
            .credential_env
            .as_deref()
            .and_then(|n| std::env::var(n).ok())
            .map(|k| format!("Bearer {k}"));
        let reply = self
            .transport
            .post_json(
                &self.config.endpoint,
                credential.as_deref().map(|v| ("Authorization", v)),
                &json!({"model": self.config.model, "input": [a, b]}),
                Duration::from_secs(self.config.timeout_secs),
            )
            .map_err(|f| match f {
                Fault::Transient(m) | Fault::Fatal(m) => MetricError::Oracle(m),
                Fault::Replayed(r) => MetricError::Oracle(r.message),
            })?;
        let vector = |i: usize| -> Result<Vec<f64>, MetricError> {
            reply
                .pointer(&format!("/data/{i}/embedding"))
                .and_then(Value::as_array)
                .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
                .ok_or_else(|| MetricError::Oracle("embedding reply has no data".into()))
        };
        Ok((vector(0)?, vector(1)?))
    }
}

impl Scorer for RemoteEmbeddingScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn modality(&self) -> Modality {
        Modality::TextText
    }

    fn score_text(&self, a: &str, b: &str) -> Result<f64, MetricError> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(MetricError::EmptyText);
        }
        let (ea, eb) = self.embeddings(a, b)?;
        if ea.len() != eb.len() {
            return Err(MetricError::Oracle("embedding dimensions differ".into()));
        }
        Ok(cosine_to_unit(&ea, &eb))
    }
}

/// Scorers addressable by name from run configuration.
#[derive(Clone, Default)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Arc<dyn Scorer>>,
}

impl ScorerRegistry {
    pub fn with_defaults() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(HashCosineScorer::default()));
        r.register(Arc::new(FeatureCoverageScorer));
        r
    }

    pub fn register(&mut self, scorer: Arc<dyn Scorer>) {
        self.scorers.insert(scorer.name().to_string(), scorer);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Scorer>, MetricError> {
        self.scorers
            .get(name)
            .cloned()
            .ok_or_else(|| MetricError::UnknownScorer(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.scorers.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::Origin;
    use proptest::prelude::*;

    fn truth(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(f, v)| (f.to_string(), v.to_string())).collect()
    }

    #[test]
    fn coverage_ratio() {
        let t = truth(&[
            ("motif", "mountain"),
            ("color scheme", "dark blue"),
            ("mood", "calm"),
            ("style", "flat"),
        ]);
        let spec = Specification::empty()
            .update("motif", "mountain", Origin::QueryAnswer)
            .unwrap()
            .update("color scheme", "Dark Blue", Origin::QueryAnswer)
            .unwrap()
            .update("mood", "angry", Origin::QueryAnswer)
            .unwrap();
        assert_eq!(
            score_feature_coverage(CoverageTarget::Spec(&spec), &t, &TieredMatcher).unwrap(),
            0.5
        );
        assert_eq!(
            score_feature_coverage(
                CoverageTarget::Prompt("a calm flat mountain, dark blue"),
                &t,
                &TieredMatcher
            )
            .unwrap(),
            1.0
        );
        assert_eq!(
            score_feature_coverage(
                CoverageTarget::Spec(&Specification::empty()),
                &truth(&[("a", "x"), ("b", "y"), ("c", "z")]),
                &TieredMatcher
            )
            .unwrap(),
            0.0
        );
        assert_eq!(
            score_feature_coverage(CoverageTarget::Prompt("x"), &BTreeMap::new(), &TieredMatcher).unwrap_err(),
            MetricError::EmptyTruth
        );
    }

    #[test]
    fn identical_text_scores_one() {
        let s = HashCosineScorer::default();
        assert_eq!(s.score_text("a red fox at dawn", "a red fox at dawn").unwrap(), 1.0);
        assert_eq!(s.score_text("", "x").unwrap_err(), MetricError::EmptyText);
    }

    #[test]
    fn disjoint_tokens_score_one_half() {
        // Oracle: disjoint token sets have orthogonal embeddings unless a bucket is
        // shared; compute the bucket sets independently and require no overlap.
        let a = "crimson fox sleeping";
        let b = "azure whale diving";
        let e = HashingEmbedding::default();
        let buckets = |t: &str| -> std::collections::BTreeSet<usize> {
            t.split(' ')
                .map(|w| {
                    let d = Sha256::digest(w.as_bytes());
                    (u64::from_be_bytes(d[..8].try_into().unwrap()) % 4096) as usize
                })
                .collect()
        };
        assert!(buckets(a).is_disjoint(&buckets(b)));
        assert_eq!(e.bucket("fox"), *buckets("fox").iter().next().unwrap());
        assert_eq!(HashCosineScorer::default().score_text(a, b).unwrap(), 0.5);
    }

    #[test]
    fn registry_resolves_defaults() {
        let r = ScorerRegistry::with_defaults();
        assert_eq!(r.names(), ["feature_coverage", "text_hash_cosine"]);
        let cov = r.get("feature_coverage").unwrap();
        assert_eq!(cov.score_text("a blue fox", "animal: fox\ncolor: red").unwrap(), 0.5);
        assert!(matches!(r.get("dreamsim"), Err(MetricError::UnknownScorer(_))));
    }

    proptest! {
        #[test]
        fn text_similarity_is_symmetric(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
            let s = HashCosineScorer::default();
            let ab = s.score_text(&a, &b).unwrap();
            prop_assert_eq!(ab, s.score_text(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(s.score_text(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn adding_a_matched_requirement_never_lowers_coverage(
            values in proptest::collection::vec("[a-z]{2,8}", 1..8), order in proptest::collection::vec(0usize..8, 0..8)
        ) {
            let t: BTreeMap<String, String> = values.iter().enumerate().map(|(i, v)| (format!("f{i}"), v.clone())).collect();
            let mut spec = Specification::empty();
            let mut last = 0.0;
            for i in order {
                if i >= values.len() || spec.contains(&format!("f{i}")) { continue; }
                spec = spec.update(&format!("f{i}"), &values[i], Origin::QueryAnswer).unwrap();
                let now = score_feature_coverage(CoverageTarget::Spec(&spec), &t, &TieredMatcher).unwrap();
                prop_assert!(now >= last);
                last = now;
            }
        }
    }
}
