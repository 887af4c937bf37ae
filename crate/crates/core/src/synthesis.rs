//! Compiling a specification into a renderer-ready prompt.
//!
//! Two oracle stages: model-specific guidelines are elicited once per session,
//! then each synthesis request combines the meta-prompt, the guidelines and the
//! requirements. Any oracle fault falls back to a deterministic template.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::intent::Specification;
use crate::oracle::{Clients, OracleKind, OracleReply};
use crate::text::{contains_phrase, normalize_label};

pub const GENERIC_GUIDELINES: &str = "Lead with the main subject. Follow with style, composition, \
color and lighting as short comma-separated descriptive phrases. Prefer concrete visual terms \
over abstract adjectives. Keep every requested attribute explicit.";

pub const DEFAULT_META_PROMPT: &str = "Using the guidelines, write a single prompt for the target \
model that incorporates every requirement listed, keeping each value recognisable.";

pub const DEFAULT_MODEL_CONTEXT: &str = "A fast distilled text-to-image diffusion model run with \
few inference steps; responds best to concrete, comma-separated visual descriptions.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisContext {
    pub meta_prompt: String,
    pub model_context: String,
    #[serde(default)]
    pub guidelines: Option<String>,
    /// Ask the oracle to confirm paraphrased values missed by the substring check.
    #[serde(default)]
    pub confirm_paraphrase: bool,
}

impl Default for SynthesisContext {
    fn default() -> Self {
        Self {
            meta_prompt: DEFAULT_META_PROMPT.into(),
            model_context: DEFAULT_MODEL_CONTEXT.into(),
            guidelines: None,
            confirm_paraphrase: false,
        }
    }
}

impl SynthesisContext {
    /// Load the meta-prompt and model context from plain-text files.
    pub fn from_files(meta_prompt: &Path, model_context: &Path) -> Result<Self, SynthesisError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| SynthesisError::Template(format!("{}: {e}", p.display())))
        };
        let ctx = Self {
            meta_prompt: read(meta_prompt)?,
            model_context: read(model_context)?,
            ..Self::default()
        };
        if ctx.meta_prompt.trim().is_empty() {
            return Err(SynthesisError::Template("meta-prompt is empty".into()));
        }
        Ok(ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedPrompt {
    pub text: String,
    pub source_revision: u64,
    pub coverage: Vec<String>,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("cannot synthesize a prompt from an empty specification")]
    EmptySpecification,
    #[error("guidelines are already elicited for this session")]
    GuidelinesAlreadySet,
    #[error("template: {0}")]
    Template(String),
}

/// Elicit model-specific guidelines once. Oracle faults install the generic block.
pub fn elicit_guidelines(clients: &Clients, ctx: &SynthesisContext) -> Result<SynthesisContext, SynthesisError> {
    if ctx.guidelines.is_some() {
        return Err(SynthesisError::GuidelinesAlreadySet);
    }
    let guidelines = match clients.call(OracleKind::Guidelines, json!({"model_context": ctx.model_context})) {
        Ok(OracleReply::Guidelines(g)) => g,
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) => {
            clients.note(
                "warn",
                format!("guideline elicitation failed, using generic block: {err}"),
            );
            GENERIC_GUIDELINES.to_string()
        }
    };
    Ok(SynthesisContext {
        guidelines: Some(guidelines),
        ..ctx.clone()
    })
}

/// Features whose value appears (as a token phrase) in `text`.
pub fn coverage(spec: &Specification, text: &str) -> Vec<String> {
    spec.requirements()
        .iter()
        .filter(|r| contains_phrase(text, &r.value))
        .map(|r| r.feature.clone())
        .collect()
}

fn confirmed_coverage(clients: &Clients, spec: &Specification, ctx: &SynthesisContext, text: &str) -> Vec<String> {
    let mut covered = coverage(spec, text);
    if !ctx.confirm_paraphrase || covered.len() == spec.len() {
        return covered;
    }
    let missing: Vec<_> = spec
        .requirements()
        .iter()
        .filter(|r| !covered.contains(&r.feature))
        .map(|r| json!({"feature": r.feature, "value": r.value}))
        .collect();
    match clients.call(
        OracleKind::ConfirmParaphrase,
        json!({"prompt": text, "requirements": missing}),
    ) {
        Ok(OracleReply::ConfirmParaphrase(confirmed)) => {
            let confirmed: Vec<String> = confirmed.iter().map(|f| normalize_label(f)).collect();
            covered = spec
                .requirements()
                .iter()
                .filter(|r| covered.contains(&r.feature) || confirmed.contains(&r.feature))
                .map(|r| r.feature.clone())
                .collect();
        }
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) => clients.note("warn", format!("paraphrase confirmation failed: {err}")),
    }
    covered
}

/// Synthesize a prompt for `spec`, with at most one repair round for missing features.
pub fn synthesize_prompt(
    clients: &Clients,
    spec: &Specification,
    ctx: &SynthesisContext,
) -> Result<SynthesizedPrompt, SynthesisError> {
    if spec.is_empty() {
        return Err(SynthesisError::EmptySpecification);
    }
    let payload = json!({
        "meta_prompt": ctx.meta_prompt,
        "model_context": ctx.model_context,
        "guidelines": ctx.guidelines,
        "requirements": spec.as_payload(),
    });
    let first = match clients.call(OracleKind::Synthesize, payload.clone()) {
        Ok(OracleReply::Synthesize(text)) => text,
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) => {
            clients.note("warn", format!("synthesis failed, using template: {err}"));
            return Ok(template_fallback(spec));
        }
    };
    let covered = confirmed_coverage(clients, spec, ctx, &first);
    if covered.len() == spec.len() {
        return Ok(SynthesizedPrompt {
            text: first,
            source_revision: spec.revision(),
            coverage: covered,
            fallback: false,
        });
    }

    let missing: Vec<&str> = spec.features().filter(|f| !covered.iter().any(|c| c == f)).collect();
    let mut repair = payload;
    repair["previous_prompt"] = json!(first);
    repair["missing_features"] = json!(missing);
    let (text, covered) = match clients.call(OracleKind::Synthesize, repair) {
        Ok(OracleReply::Synthesize(text)) => {
            let covered = confirmed_coverage(clients, spec, ctx, &text);
            (text, covered)
        }
        Ok(_) => unreachable!("schema parse returns the requested kind"),
        Err(err) => {
            clients.note("warn", format!("synthesis repair round failed: {err}"));
            (first, covered)
        }
    };
    Ok(SynthesizedPrompt {
        text,
        source_revision: spec.revision(),
        coverage: covered,
        fallback: false,
    })
}

fn phrase(feature: &str, value: &str) -> String {
    let value_norm = normalize_label(value);
    if feature.contains("style") {
        if value_norm.ends_with("style") {
            value.to_string()
        } else {
            format!("{value} style")
        }
    } else if ["scheme", "palette", "lighting"].iter().any(|s| feature.ends_with(s)) {
        let last = feature.rsplit(' ').next().unwrap_or(feature);
        if value_norm.split(' ').any(|w| w == last) {
            value.to_string()
        } else {
            format!("{value} {feature}")
        }
    } else {
        value.to_string()
    }
}

/// Deterministic prompt: values in insertion order joined by ", ", with
/// style-like and scheme-like features suffixed by their label.
pub fn template_fallback(spec: &Specification) -> SynthesizedPrompt {
    let text = spec
        .requirements()
        .iter()
        .map(|r| phrase(&r.feature, &r.value))
        .collect::<Vec<_>>()
        .join(", ");
    SynthesizedPrompt {
        text,
        source_revision: spec.revision(),
        coverage: spec.features().map(str::to_string).collect(),
        fallback: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::Origin;
    use crate::oracle::scripted::{ScriptedBackend, ScriptedRenderer};
    use crate::oracle::JournalRecord;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn clients(backend: ScriptedBackend) -> Clients {
        Clients::new(Arc::new(backend), Arc::new(ScriptedRenderer::default()))
    }

    fn spec(pairs: &[(&str, &str)]) -> Specification {
        pairs.iter().fold(Specification::empty(), |s, (f, v)| {
            s.update(f, v, Origin::QueryAnswer).unwrap()
        })
    }

    #[test]
    fn template_examples() {
        assert_eq!(template_fallback(&spec(&[("theme", "hiking")])).text, "hiking");
        assert_eq!(
            template_fallback(&spec(&[("theme", "hiking"), ("color scheme", "dark blue")])).text,
            "hiking, dark blue color scheme"
        );
        assert_eq!(
            template_fallback(&spec(&[("subject", "mountain"), ("style", "flat minimalist")])).text,
            "mountain, flat minimalist style"
        );
        assert_eq!(
            template_fallback(&spec(&[("art style", "watercolor style")])).text,
            "watercolor style"
        );
    }

    #[test]
    fn failing_oracle_uses_the_template() {
        let s = spec(&[("subject", "mountain"), ("style", "flat minimalist")]);
        let out = synthesize_prompt(&clients(ScriptedBackend::new(true)), &s, &SynthesisContext::default()).unwrap();
        assert_eq!(out.text, "mountain, flat minimalist style");
        assert!(out.fallback);
        assert_eq!(out.source_revision, s.revision());
    }

    #[test]
    fn empty_specification_is_rejected() {
        assert_eq!(
            synthesize_prompt(
                &clients(ScriptedBackend::new(false)),
                &Specification::empty(),
                &SynthesisContext::default()
            )
            .unwrap_err(),
            SynthesisError::EmptySpecification
        );
    }

    #[test]
    fn full_coverage_fixture() {
        let s = spec(&[
            ("subject", "lighthouse"),
            ("art style", "linocut"),
            ("color scheme", "navy and cream"),
            ("lighting", "overcast"),
            ("composition", "centered"),
            ("mood", "calm"),
            ("background", "rocky coast"),
            ("texture", "grainy paper"),
        ]);
        let text = "A centered lighthouse on a rocky coast, linocut print, navy and cream color scheme, \
                    overcast lighting, calm mood, grainy paper texture";
        let c = clients(ScriptedBackend::new(true).wildcard(OracleKind::Synthesize, json!({"prompt": text})));
        let out = synthesize_prompt(&c, &s, &SynthesisContext::default()).unwrap();
        assert_eq!(out.coverage.len(), 8);
        assert_eq!(out.text, text);
        // no repair round when nothing is missing
        assert_eq!(c.journal().len(), 2);
    }

    #[test]
    fn one_repair_round_for_missing_features() {
        let s = spec(&[("subject", "fox"), ("mood", "eerie")]);
        let c = clients(ScriptedBackend::new(true).wildcard(OracleKind::Synthesize, json!({"prompt": "a fox"})));
        let out = synthesize_prompt(&c, &s, &SynthesisContext::default()).unwrap();
        assert_eq!(out.coverage, ["subject"]);
        let requests: Vec<_> = c
            .journal()
            .entries()
            .into_iter()
            .filter_map(|e| match e.record {
                JournalRecord::OracleRequest { payload, .. } => Some(payload),
                _ => None,
            })
            .collect();
        assert_eq!(requests.len(), 2);
        assert_eq!(requests[1]["missing_features"], json!(["mood"]));
    }

    #[test]
    fn paraphrase_confirmation_is_opt_in() {
        let s = spec(&[("subject", "fox"), ("mood", "eerie")]);
        let backend = ScriptedBackend::new(true)
            .wildcard(OracleKind::Synthesize, json!({"prompt": "an unsettling fox"}))
            .wildcard(OracleKind::ConfirmParaphrase, json!({"covered": ["mood"]}));
        let ctx = SynthesisContext {
            confirm_paraphrase: true,
            ..SynthesisContext::default()
        };
        let out = synthesize_prompt(&clients(backend), &s, &ctx).unwrap();
        assert_eq!(out.coverage, ["subject", "mood"]);
    }

    #[test]
    fn guidelines_are_cached_once() {
        let c = clients(ScriptedBackend::new(true).wildcard(
            OracleKind::Guidelines,
            json!({"guidelines": "Use short phrases; put the subject first."}),
        ));
        let ctx = elicit_guidelines(&c, &SynthesisContext::default()).unwrap();
        assert_eq!(
            ctx.guidelines.as_deref(),
            Some("Use short phrases; put the subject first.")
        );
        assert_eq!(
            elicit_guidelines(&c, &ctx).unwrap_err(),
            SynthesisError::GuidelinesAlreadySet
        );
    }

    #[test]
    fn guideline_failure_installs_generic_block() {
        let c = clients(ScriptedBackend::new(true));
        let ctx = elicit_guidelines(&c, &SynthesisContext::default()).unwrap();
        assert_eq!(ctx.guidelines.as_deref(), Some(GENERIC_GUIDELINES));
        assert!(c
            .journal()
            .entries()
            .iter()
            .any(|e| matches!(&e.record, JournalRecord::Note { level, .. } if level == "warn")));
    }

    proptest! {
        #[test]
        fn template_is_total_and_monotone(
            values in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8})?", 1..8)
        ) {
            let mut s = Specification::empty();
            let mut last: Vec<String> = Vec::new();
            for (i, v) in values.iter().enumerate() {
                let feature = ["theme", "color scheme", "art style", "lighting"][i % 4].to_string() + &format!(" {i}");
                s = s.update(&feature, v, Origin::QueryAnswer).unwrap();
                let out = template_fallback(&s);
                prop_assert!(!out.text.is_empty());
                prop_assert_eq!(out.coverage.len(), s.len());
                prop_assert!(last.iter().all(|f| out.coverage.contains(f)));
                prop_assert_eq!(out.source_revision, s.revision());
                prop_assert_eq!(coverage(&s, &out.text).len(), s.len());
                last = out.coverage;
            }
        }
    }
}
