//! Response schemas, one per [`OracleKind`]. Every violation is a
//! [`OracleError::Schema`]; nothing is silently defaulted here.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;

use super::{OracleError, OracleKind};

/// Answer shape produced by an answering oracle (LLM-backed simulator).
pub use crate::query::Answer as RawAnswer;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleReply {
    /// `{"requirements": [{"feature": s, "value": s}, ...]}`
    ExtractFeatures(Vec<(String, String)>),
    /// `{"features": [s, ...]}`
    ProposeFeatures(Vec<String>),
    /// `{"samples": [{feature: value, ...}, ...]}`
    SampleIntent(Vec<BTreeMap<String, String>>),
    /// `{"weight": number}`
    RateWeight(f64),
    /// `{"options": [s, ...]}`
    OptionValues(Vec<String>),
    /// `{"guidelines": s}`
    Guidelines(String),
    /// `{"prompt": s}`
    Synthesize(String),
    /// `{"reasoning": s?, "answer": {"option_index": n} | {"other_text": s}}`
    SimulateAnswer {
        reasoning: Option<String>,
        answer: RawAnswer,
    },
    /// `{"covered": [feature, ...]}`
    ConfirmParaphrase(Vec<String>),
}

#[derive(Deserialize)]
struct Pair {
    feature: String,
    value: String,
}

#[derive(Deserialize)]
struct Extract {
    requirements: Vec<Pair>,
}

#[derive(Deserialize)]
struct Features {
    features: Vec<String>,
}

#[derive(Deserialize)]
struct Samples {
    samples: Vec<BTreeMap<String, String>>,
}

#[derive(Deserialize)]
struct Weight {
    weight: f64,
}

#[derive(Deserialize)]
struct Options {
    options: Vec<String>,
}

#[derive(Deserialize)]
struct Guidelines {
    guidelines: String,
}

#[derive(Deserialize)]
struct Prompt {
    prompt: String,
}

#[derive(Deserialize)]
struct Simulated {
    #[serde(default)]
    reasoning: Option<String>,
    answer: RawAnswer,
}

#[derive(Deserialize)]
struct Covered {
    covered: Vec<String>,
}

fn decode<T: for<'de> Deserialize<'de>>(kind: OracleKind, value: &Value) -> Result<T, OracleError> {
    T::deserialize(value).map_err(|e| OracleError::Schema {
        kind,
        message: e.to_string(),
    })
}

fn non_empty(kind: OracleKind, field: &str, text: &str) -> Result<(), OracleError> {
    if text.trim().is_empty() {
        Err(OracleError::Schema {
            kind,
            message: format!("`{field}` is empty"),
        })
    } else {
        Ok(())
    }
}

pub fn parse(kind: OracleKind, value: &Value) -> Result<OracleReply, OracleError> {
    Ok(match kind {
        OracleKind::ExtractFeatures => OracleReply::ExtractFeatures(
            decode::<Extract>(kind, value)?
                .requirements
                .into_iter()
                .map(|p| (p.feature, p.value))
                .collect(),
        ),
        OracleKind::ProposeFeatures => OracleReply::ProposeFeatures(decode::<Features>(kind, value)?.features),
        OracleKind::SampleIntent => OracleReply::SampleIntent(decode::<Samples>(kind, value)?.samples),
        OracleKind::RateWeight => {
            let w = decode::<Weight>(kind, value)?.weight;
            if !w.is_finite() {
                return Err(OracleError::Schema {
                    kind,
                    message: "weight is not finite".into(),
                });
            }
            OracleReply::RateWeight(w)
        }
        OracleKind::OptionValues => OracleReply::OptionValues(decode::<Options>(kind, value)?.options),
        OracleKind::Guidelines => {
            let g = decode::<Guidelines>(kind, value)?.guidelines;
            non_empty(kind, "guidelines", &g)?;
            OracleReply::Guidelines(g)
        }
        OracleKind::Synthesize => {
            let p = decode::<Prompt>(kind, value)?.prompt;
            non_empty(kind, "prompt", &p)?;
            OracleReply::Synthesize(p)
        }
        OracleKind::SimulateAnswer => {
            let s = decode::<Simulated>(kind, value)?;
            OracleReply::SimulateAnswer {
                reasoning: s.reasoning,
                answer: s.answer,
            }
        }
        OracleKind::ConfirmParaphrase => OracleReply::ConfirmParaphrase(decode::<Covered>(kind, value)?.covered),
    })
}
