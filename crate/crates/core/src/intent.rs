//! Partial intent specification, the dynamic feature space, and persona
//! sampling of complete intents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::oracle::{Clients, OracleError, OracleKind, OracleReply};
use crate::text::{clean_value, normalize_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InitialPrompt,
    QueryAnswer,
    OtherAnswer,
    ManualAdd,
    ManualEdit,
}

impl Origin {
    fn may_replace(self) -> bool {
        matches!(self, Origin::ManualEdit | Origin::OtherAnswer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRequirement {
    pub feature: String,
    pub value: String,
    pub origin: Origin,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("initial prompt is empty")]
    EmptyPrompt,
    #[error("feature label is empty")]
    EmptyFeature,
    #[error("value for `{0}` is empty")]
    EmptyValue(String),
    #[error("feature `{0}` already has an elicited value")]
    DuplicateFeatureConflict(String),
    #[error("feature `{0}` is not specified")]
    UnknownFeature(String),
    #[error("{0}")]
    InvalidArgument(&'static str),
    #[error("invalid specification record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// The partial intent: ordered feature/value pairs plus a revision counter.
///
/// Immutable; every mutation returns a new value with a higher revision.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SpecificationRecord")]
pub struct Specification {
    requirements: Vec<FeatureRequirement>,
    revision: u64,
}

#[derive(Deserialize)]
struct SpecificationRecord {
    requirements: Vec<FeatureRequirement>,
    revision: u64,
}

impl TryFrom<SpecificationRecord> for Specification {
    type Error = IntentError;

    fn try_from(record: SpecificationRecord) -> Result<Self, Self::Error> {
        let mut seen = std::collections::HashSet::new();
        for r in &record.requirements {
            if normalize_label(&r.feature).is_empty() || clean_value(&r.value).is_empty() {
                return Err(IntentError::InvalidRecord("empty feature or value".into()));
            }
            if !seen.insert(normalize_label(&r.feature)) {
                return Err(IntentError::InvalidRecord(format!("duplicate feature `{}`", r.feature)));
            }
        }
        Ok(Specification {
            requirements: record.requirements,
            revision: record.revision,
        })
    }
}

impl Specification {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn requirements(&self) -> &[FeatureRequirement] {
        &self.requirements
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.requirements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requirements.is_empty()
    }

    pub fn get(&self, feature: &str) -> Option<&FeatureRequirement> {
        let key = normalize_label(feature);
        self.requirements.iter().find(|r| r.feature == key)
    }

    pub fn contains(&self, feature: &str) -> bool {
        self.get(feature).is_some()
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.requirements.iter().map(|r| r.feature.as_str())
    }

    fn next_seq(&self) -> u64 {
        self.requirements.iter().map(|r| r.seq).max().unwrap_or(0) + 1
    }

    /// Append-or-replace. Replacement is allowed only for manual edits and
    /// residual ("Other") answers.
    pub fn update(&self, feature: &str, value: &str, origin: Origin) -> Result<Self, IntentError> {
        let feature = normalize_label(feature);
        if feature.is_empty() {
            return Err(IntentError::EmptyFeature);
        }
        let value = clean_value(value);
        if value.is_empty() {
            return Err(IntentError::EmptyValue(feature));
        }
        let mut next = self.clone();
        let seq = self.next_seq();
        match next.requirements.iter_mut().find(|r| r.feature == feature) {
            Some(existing) if origin.may_replace() => {
                existing.value = value;
                existing.origin = origin;
                existing.seq = seq;
            }
            Some(_) => return Err(IntentError::DuplicateFeatureConflict(feature)),
            None => next.requirements.push(FeatureRequirement {
                feature,
                value,
                origin,
                seq,
            }),
        }
        next.revision += 1;
        Ok(next)
    }

    /// Manual deletion, recorded as a manual edit that removes the pair.
    pub fn remove(&self, feature: &str) -> Result<Self, IntentError> {
        let key = normalize_label(feature);
        let mut next = self.clone();
        let before = next.requirements.len();
        next.requirements.retain(|r| r.feature != key);
        if next.requirements.len() == before {
            return Err(IntentError::UnknownFeature(key));
        }
        next.revision += 1;
        Ok(next)
    }

    /// Feature/value pairs as sent to the oracle (no origin or sequence data).
    pub fn as_payload(&self) -> Value {
        Value::Array(
            self.requirements
                .iter()
                .map(|r| json!({"feature": r.feature, "value": r.value}))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmProposed,
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceFeature {
    pub label: String,
    pub provenance: Provenance,
}

/// Not-yet-specified features proposed for the current context.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub features: Vec<SpaceFeature>,
}

impl FeatureSpace {
    pub fn labels(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.label.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    /// Space restricted to `labels`, keeping this space's order.
    pub fn restricted_to(&self, labels: &[&str]) -> FeatureSpace {
        FeatureSpace {
            features: self
                .features
                .iter()
                .filter(|f| labels.contains(&f.label.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// One persona-sampled complete intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSample {
    pub sample_id: usize,
    pub assignments: BTreeMap<String, String>,
}

/// A persona sample that had to be corrected to agree with the specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRepair {
    pub sample_id: usize,
    pub feature: String,
    pub found: Option<String>,
    pub repaired_to: String,
}

/// Placeholder value for a feature the persona left unassigned; it lands in
/// the residual bucket.
pub const UNASSIGNED: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonaConfig {
    /// Number of persona samples per round.
    pub k: usize,
    /// Instruction text forwarded with every sampling request.
    pub template: String,
    /// Seed forwarded to the persona for reproducible sampling.
    pub seed: u64,
    /// Features appended to oracle proposals when room remains.
    pub seed_features: Vec<String>,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            k: 8,
            template: "Sample plausible complete intents consistent with the specified requirements.".into(),
            seed: 0,
            seed_features: Vec::new(),
        }
    }
}

/// Build the initial specification from the user's prompt.
///
/// A malformed or empty extraction falls back to a single `theme` requirement
/// holding the raw prompt. Failed oracle calls propagate.
pub fn initialize_specification(clients: &Clients, initial_prompt: &str) -> Result<Specification, IntentError> {
    let prompt = clean_value(initial_prompt);
    if prompt.is_empty() {
        return Err(IntentError::EmptyPrompt);
    }
    let pairs = match clients.call(OracleKind::ExtractFeatures, json!({"initial_prompt": prompt})) {
        Ok(OracleReply::ExtractFeatures(pairs)) => pairs,
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) if err.is_schema() => {
            clients.note("warn", format!("feature extraction malformed, using fallback: {err}"));
            Vec::new()
        }
        Err(err) => return Err(err.into()),
    };
    let mut spec = Specification::empty();
    for (feature, value) in pairs {
        match spec.update(&feature, &value, Origin::InitialPrompt) {
            Ok(next) => spec = next,
            Err(err) => clients.note("warn", format!("dropped extracted pair: {err}")),
        }
    }
    if spec.is_empty() {
        spec = spec.update("theme", &prompt, Origin::InitialPrompt)?;
    }
    Ok(spec)
}

/// Ask the oracle which unspecified features would clarify the intent.
pub fn propose_feature_space(
    clients: &Clients,
    spec: &Specification,
    max_features: usize,
    seeded: &[String],
) -> Result<FeatureSpace, IntentError> {
    if max_features == 0 {
        return Err(IntentError::InvalidArgument("max_features must be at least 1"));
    }
    let proposals = match clients.call(
        OracleKind::ProposeFeatures,
        json!({"requirements": spec.as_payload(), "max_features": max_features}),
    )? {
        OracleReply::ProposeFeatures(f) => f,
        _ => unreachable!("schema parse returns the requested kind"),
    };
    let mut space = FeatureSpace::default();
    let candidates = proposals
        .iter()
        .map(|f| (f, Provenance::LlmProposed))
        .chain(seeded.iter().map(|f| (f, Provenance::Seeded)));
    for (raw, provenance) in candidates {
        if space.features.len() == max_features {
            break;
        }
        let label = normalize_label(raw);
        if label.is_empty() || spec.contains(&label) || space.features.iter().any(|f| f.label == label) {
            continue;
        }
        space.features.push(SpaceFeature { label, provenance });
    }
    Ok(space)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<IntentSample>,
    pub repairs: Vec<SampleRepair>,
}

/// Draw `k` complete intents from the persona, repaired to agree with `spec`.
pub fn sample_intents(
    clients: &Clients,
    spec: &Specification,
    space: &FeatureSpace,
    k: usize,
    persona: &PersonaConfig,
) -> Result<SampleBatch, IntentError> {
    if k == 0 {
        return Err(IntentError::InvalidArgument("k must be at least 1"));
    }
    if space.is_empty() {
        return Err(IntentError::InvalidArgument("feature space is empty"));
    }
    let base = json!({
        "requirements": spec.as_payload(),
        "features": space.labels(),
        "template": persona.template,
        "seed": persona.seed,
    });
    let with = |extra: Value| {
        let mut payload = base.clone();
        let obj = payload.as_object_mut().expect("payload is an object");
        for (key, value) in extra.as_object().expect("extra is an object") {
            obj.insert(key.clone(), value.clone());
        }
        payload
    };

    let mut raw = Vec::with_capacity(k);
    if clients.supports_batch() {
        raw = expect_samples(clients.call(OracleKind::SampleIntent, with(json!({"k": k}))))?;
    } else {
        for index in 0..k {
            let mut one =
                expect_samples(clients.call(OracleKind::SampleIntent, with(json!({"k": 1, "sample_index": index}))))?;
            raw.extend(one.drain(..1.min(one.len())));
        }
    }
    if raw.len() < k {
        return Err(OracleError::Schema {
            kind: OracleKind::SampleIntent,
            message: format!("expected {k} samples, got {}", raw.len()),
        }
        .into());
    }
    raw.truncate(k);

    let mut batch = SampleBatch {
        samples: Vec::with_capacity(k),
        repairs: Vec::new(),
    };
    for (i, sample) in raw.into_iter().enumerate() {
        let sample_id = i + 1;
        let found: BTreeMap<String, String> = sample
            .into_iter()
            .map(|(f, v)| (normalize_label(&f), clean_value(&v)))
            .collect();
        let mut assignments = BTreeMap::new();
        for r in spec.requirements() {
            let got = found.get(&r.feature);
            if got.map(|v| normalize_label(v)) != Some(normalize_label(&r.value)) {
                batch.repairs.push(SampleRepair {
                    sample_id,
                    feature: r.feature.clone(),
                    found: got.cloned(),
                    repaired_to: r.value.clone(),
                });
            }
            assignments.insert(r.feature.clone(), r.value.clone());
        }
        for f in &space.features {
            match found.get(&f.label).filter(|v| !v.is_empty()) {
                Some(v) => {
                    assignments.insert(f.label.clone(), v.clone());
                }
                None => {
                    batch.repairs.push(SampleRepair {
                        sample_id,
                        feature: f.label.clone(),
                        found: None,
                        repaired_to: UNASSIGNED.into(),
                    });
                    assignments.insert(f.label.clone(), UNASSIGNED.into());
                }
            }
        }
        batch.samples.push(IntentSample { sample_id, assignments });
    }
    for repair in &batch.repairs {
        clients.note(
            "flag",
            format!(
                "inconsistent persona sample {} on `{}`: {:?} -> {}",
                repair.sample_id, repair.feature, repair.found, repair.repaired_to
            ),
        );
    }
    Ok(batch)
}

fn expect_samples(reply: Result<OracleReply, OracleError>) -> Result<Vec<BTreeMap<String, String>>, IntentError> {
    match reply? {
        OracleReply::SampleIntent(s) => Ok(s),
        _ => unreachable!("schema parse returns the requested kind"),
    }
}
