//! Candidate visual queries, their option-preference distributions, EAUG
//! scoring and selection.
//!
//! EAUG(q) = weight(q) * H(p), where p is the distribution of persona votes
//! over the query's options plus the residual "Other" bucket, and H is the
//! Shannon entropy in nats with 0 ln 0 = 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::intent::{FeatureSpace, IntentError, IntentSample, Origin, Specification};
use crate::matcher::{MatchOutcome, OptionMatcher};
use crate::oracle::{Clients, ImageHandle, OracleError, OracleKind, OracleReply, RenderParameters, RenderPurpose};
use crate::synthesis::{synthesize_prompt, SynthesisContext};
use crate::text::{clean_value, normalize_label};

/// Tolerance on the sum of an option distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    OptionIndex(usize),
    OtherText(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOption {
    pub label: String,
    #[serde(default)]
    pub exemplar_prompt: Option<String>,
    #[serde(default)]
    pub exemplar_image: Option<ImageHandle>,
}

impl QueryOption {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            exemplar_prompt: None,
            exemplar_image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuery {
    pub feature: String,
    pub options: Vec<QueryOption>,
    pub has_residual: bool,
    pub weight: f64,
    #[serde(default)]
    pub option_distribution: Option<Vec<f64>>,
}

impl CandidateQuery {
    pub fn new(feature: impl Into<String>, labels: &[&str], weight: f64) -> Self {
        Self {
            feature: normalize_label(&feature.into()),
            options: labels.iter().map(|l| QueryOption::new(*l)).collect(),
            has_residual: true,
            weight,
            option_distribution: None,
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.label.as_str()).collect()
    }

    /// Options plus the residual bucket, when present.
    pub fn bucket_count(&self) -> usize {
        self.options.len() + usize::from(self.has_residual)
    }

    pub fn question(&self) -> String {
        format!("Which {} best matches your vision?", self.feature)
    }

    fn validated_distribution(&self) -> Result<&[f64], QueryError> {
        let p = self
            .option_distribution
            .as_deref()
            .ok_or_else(|| QueryError::InvalidDistribution("distribution missing".into()))?;
        if !(0.0..=1.0).contains(&self.weight) || !self.weight.is_finite() {
            return Err(QueryError::InvalidDistribution(format!(
                "weight {} outside [0, 1]",
                self.weight
            )));
        }
        if p.len() != self.bucket_count() {
            return Err(QueryError::InvalidDistribution(format!(
                "{} entries for {} buckets",
                p.len(),
                self.bucket_count()
            )));
        }
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(QueryError::InvalidDistribution("negative or non-finite entry".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(QueryError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub query: CandidateQuery,
    pub entropy: f64,
    pub eaug: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("no unspecified features left to ask about")]
    NoUnspecifiedFeatures,
    #[error("no candidate queries to select from")]
    EmptyCandidates,
    #[error("query has no options")]
    NoOptions,
    #[error("{0}")]
    InvalidArgument(&'static str),
    #[error("invalid option distribution: {0}")]
    InvalidDistribution(String),
    #[error("cannot classify `{0}` and the query has no residual option")]
    Matcher(String),
    #[error("persona sample {0} does not assign the queried feature")]
    MissingAssignment(usize),
    #[error("option index {index} out of range for {options} options")]
    InvalidOptionIndex { index: usize, options: usize },
    #[error("the Other answer is empty")]
    EmptyOtherText,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Synthesis(#[from] crate::synthesis::SynthesisError),
}

/// Importance ratings cached per feature for the life of a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightCache(pub BTreeMap<String, f64>);

impl WeightCache {
    pub fn get_or_estimate(&mut self, clients: &Clients, feature: &str, spec: &Specification) -> f64 {
        let key = normalize_label(feature);
        if let Some(w) = self.0.get(&key) {
            return *w;
        }
        let w = estimate_weight(clients, &key, spec);
        self.0.insert(key, w);
        w
    }
}

/// Importance rating in [0, 1] from the oracle; out-of-range ratings are clamped
/// and any fault falls back to 1.0 (recorded in the journal).
pub fn estimate_weight(clients: &Clients, feature: &str, spec: &Specification) -> f64 {
    let payload = json!({"feature": normalize_label(feature), "requirements": spec.as_payload()});
    match clients.call(OracleKind::RateWeight, payload) {
        Ok(OracleReply::RateWeight(w)) => w.clamp(0.0, 1.0),
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) => {
            clients.note("warn", format!("weight for `{feature}` fell back to 1.0: {err}"));
            1.0
        }
    }
}

/// One candidate per unspecified feature (in space order), each with at most
/// `max_options` distinct options and the residual option.
pub fn generate_candidates(
    clients: &Clients,
    spec: &Specification,
    space: &FeatureSpace,
    max_candidates: usize,
    max_options: usize,
    weights: &mut WeightCache,
) -> Result<Vec<CandidateQuery>, QueryError> {
    if max_candidates == 0 {
        return Err(QueryError::InvalidArgument("max_candidates must be at least 1"));
    }
    if max_options < 2 {
        return Err(QueryError::InvalidArgument("max_options must be at least 2"));
    }
    let mut candidates = Vec::new();
    for feature in space.features.iter().filter(|f| !spec.contains(&f.label)) {
        if candidates.len() == max_candidates {
            break;
        }
        let reply = clients.call(
            OracleKind::OptionValues,
            json!({
                "feature": feature.label,
                "requirements": spec.as_payload(),
                "max_options": max_options,
            }),
        )?;
        let OracleReply::OptionValues(raw) = reply else {
            unreachable!("schema parse returns the requested kind")
        };
        let mut options: Vec<QueryOption> = Vec::new();
        for label in raw.iter().map(|l| clean_value(l)).filter(|l| !l.is_empty()) {
            if options.len() == max_options {
                break;
            }
            if options
                .iter()
                .all(|o| normalize_label(&o.label) != normalize_label(&label))
            {
                options.push(QueryOption::new(label));
            }
        }
        if options.is_empty() {
            clients.note("warn", format!("no options proposed for `{}`, skipped", feature.label));
            continue;
        }
        let weight = weights.get_or_estimate(clients, &feature.label, spec);
        candidates.push(CandidateQuery {
            feature: feature.label.clone(),
            options,
            has_residual: true,
            weight,
            option_distribution: None,
        });
    }
    if candidates.is_empty() {
        return Err(QueryError::NoUnspecifiedFeatures);
    }
    Ok(candidates)
}

/// Vote shares of the persona samples over options (+ residual). Stored on the query.
pub fn estimate_option_distribution(
    query: &mut CandidateQuery,
    samples: &[IntentSample],
    matcher: &dyn OptionMatcher,
) -> Result<Vec<f64>, QueryError> {
    if samples.is_empty() {
        return Err(QueryError::InvalidArgument("at least one persona sample is required"));
    }
    let labels = query.labels();
    let mut counts = vec![0usize; query.bucket_count()];
    for sample in samples {
        let value = sample
            .assignments
            .get(&query.feature)
            .ok_or(QueryError::MissingAssignment(sample.sample_id))?;
        match matcher.classify(value, &labels, query.has_residual) {
            MatchOutcome::Option(i) => counts[i] += 1,
            MatchOutcome::Residual => counts[labels.len()] += 1,
            MatchOutcome::Unmatched => return Err(QueryError::Matcher(value.clone())),
        }
    }
    let k = samples.len() as f64;
    let p: Vec<f64> = counts.into_iter().map(|c| c as f64 / k).collect();
    query.option_distribution = Some(p.clone());
    Ok(p)
}

/// Shannon entropy in nats; zero-probability buckets contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn compute_eaug(query: &CandidateQuery) -> Result<ScoredQuery, QueryError> {
    let p = query.validated_distribution()?;
    let h = entropy(p).max(0.0);
    Ok(ScoredQuery {
        query: query.clone(),
        entropy: h,
        eaug: query.weight * h,
    })
}

/// Index of the highest-EAUG query; ties go to the higher weight, then the lower index.
pub fn select_query(scored: &[ScoredQuery]) -> Result<usize, QueryError> {
    let mut best: Option<usize> = None;
    for (i, s) in scored.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &scored[b];
                s.eaug > cur.eaug || (s.eaug == cur.eaug && s.query.weight > cur.query.weight)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best.ok_or(QueryError::EmptyCandidates)
}

/// Attach a feature-emphasized prompt and exemplar image to every option.
///
/// All images share `seed` and `parameters`; an option whose render fails keeps
/// its prompt and stays presentable as text.
pub fn render_query_exemplars(
    clients: &Clients,
    query: &CandidateQuery,
    spec: &Specification,
    synthesis: &SynthesisContext,
    seed: u64,
    parameters: &RenderParameters,
    round: u32,
) -> Result<CandidateQuery, QueryError> {
    if query.options.is_empty() {
        return Err(QueryError::NoOptions);
    }
    let mut rendered = query.clone();
    let mut prompts = Vec::with_capacity(query.options.len());
    for (i, option) in query.options.iter().enumerate() {
        let with_option = if spec.contains(&query.feature) {
            spec.update(&query.feature, &option.label, Origin::ManualEdit)?
        } else {
            spec.update(&query.feature, &option.label, Origin::QueryAnswer)?
        };
        let prompt = synthesize_prompt(clients, &with_option, synthesis)?.text;
        prompts.push((
            prompt,
            RenderPurpose::Exemplar {
                round,
                feature: query.feature.clone(),
                option_index: i,
            },
        ));
    }
    let results = clients.render_batch(&prompts, seed, parameters);
    for ((option, (prompt, _)), result) in rendered.options.iter_mut().zip(prompts).zip(results) {
        option.exemplar_prompt = Some(prompt);
        match result {
            Ok(handle) => option.exemplar_image = Some(handle),
            Err(err) => {
                clients.note("warn", format!("exemplar for `{}` is text-only: {err}", option.label));
                option.exemplar_image = None;
            }
        }
    }
    Ok(rendered)
}

/// Apply an answer to the active query.
pub fn handle_answer(
    spec: &Specification,
    query: &CandidateQuery,
    answer: &Answer,
) -> Result<Specification, QueryError> {
    match answer {
        Answer::OptionIndex(index) => {
            let option = query.options.get(*index).ok_or(QueryError::InvalidOptionIndex {
                index: *index,
                options: query.options.len(),
            })?;
            Ok(spec.update(&query.feature, &option.label, Origin::QueryAnswer)?)
        }
        Answer::OtherText(text) => {
            if clean_value(text).is_empty() {
                return Err(QueryError::EmptyOtherText);
            }
            Ok(spec.update(&query.feature, text, Origin::OtherAnswer)?)
        }
    }
}
