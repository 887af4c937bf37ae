use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::case::{BenchmarkCase, GroundTruth};
use super::SimulationError;
use crate::matcher::{MatchOutcome, OptionMatcher};
use crate::oracle::{Clients, OracleKind, OracleReply};
use crate::query::{Answer, CandidateQuery};
use crate::text::clean_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    /// LLM-backed, holds the target images.
    VisionBased,
    /// LLM-backed, holds the text brief.
    IntentBased,
    /// Deterministic, answers from a synthetic intent.
    Scripted,
}

impl UserKind {
    /// Default simulator for a case's ground-truth variant.
    pub fn for_case(case: &BenchmarkCase) -> UserKind {
        match case.ground_truth {
            GroundTruth::SyntheticIntent(_) => UserKind::Scripted,
            GroundTruth::Brief(_) => UserKind::IntentBased,
            GroundTruth::ReferenceImages(_) => UserKind::VisionBased,
        }
    }
}

/// The simulated user. LLM-backed kinds talk to their own oracle through a
/// separate [`Clients`], so nothing they send or receive lands in the engine's
/// journal.
pub struct SimulatedUser {
    kind: UserKind,
    truth: BTreeMap<String, String>,
    ground_truth: GroundTruth,
    clients: Option<Clients>,
}

/// Longest Other answer forwarded from an LLM-backed user.
pub const MAX_OTHER_CHARS: usize = 120;

impl SimulatedUser {
    pub fn scripted(case: &BenchmarkCase) -> Result<Self, SimulationError> {
        let truth = case.truth_features();
        if truth.is_empty() {
            return Err(SimulationError::InvalidCase {
                case_id: case.case_id.clone(),
                message: "a scripted user needs feature/value ground truth".into(),
            });
        }
        Ok(Self {
            kind: UserKind::Scripted,
            truth,
            ground_truth: case.ground_truth.clone(),
            clients: None,
        })
    }

    pub fn llm_backed(kind: UserKind, case: &BenchmarkCase, clients: Clients) -> Result<Self, SimulationError> {
        if kind == UserKind::Scripted {
            return Self::scripted(case);
        }
        Ok(Self {
            kind,
            truth: case.truth_features(),
            ground_truth: case.ground_truth.clone(),
            clients: Some(clients),
        })
    }

    pub fn kind(&self) -> UserKind {
        self.kind
    }

    /// The simulator's own clients (LLM-backed kinds only).
    pub fn clients(&self) -> Option<&Clients> {
        self.clients.as_ref()
    }
}

/// Answer `query` as the simulated user would. Only the selection leaves this
/// function; LLM reasoning is dropped here.
pub fn simulate_answer(
    user: &SimulatedUser,
    query: &CandidateQuery,
    matcher: &dyn OptionMatcher,
) -> Result<Answer, SimulationError> {
    if query.options.is_empty() {
        return Err(SimulationError::InvalidQuery("query has no options".into()));
    }
    let labels = query.labels();
    match (&user.kind, &user.clients) {
        (UserKind::Scripted, _) | (_, None) => Ok(match user.truth.get(&query.feature) {
            Some(value) => match matcher.classify(value, &labels, query.has_residual) {
                MatchOutcome::Option(i) => Answer::OptionIndex(i),
                _ => Answer::OtherText(value.clone()),
            },
            // No preference on this feature: take the first option.
            None => Answer::OptionIndex(0),
        }),
        (kind, Some(clients)) => {
            let mut payload = json!({
                "user_kind": kind,
                "feature": query.feature,
                "question": query.question(),
                "options": labels,
                "allow_other": query.has_residual,
            });
            match &user.ground_truth {
                GroundTruth::Brief(text) => payload["brief"] = json!(text),
                GroundTruth::ReferenceImages(images) => payload["reference_images"] = json!(images),
                GroundTruth::SyntheticIntent(intent) => payload["brief"] = json!(intent),
            }
            let reply = clients.call(OracleKind::SimulateAnswer, payload)?;
            let OracleReply::SimulateAnswer { answer, .. } = reply else {
                unreachable!("schema parse returns the requested kind")
            };
            match answer {
                Answer::OptionIndex(i) if i < query.options.len() => Ok(Answer::OptionIndex(i)),
                Answer::OptionIndex(i) => Err(SimulationError::InvalidAnswer(format!(
                    "option {i} out of range for {} options",
                    query.options.len()
                ))),
                Answer::OtherText(text) => {
                    let first_line = text.lines().next().unwrap_or_default();
                    let value: String = clean_value(first_line).chars().take(MAX_OTHER_CHARS).collect();
                    if value.is_empty() || !query.has_residual {
                        return Err(SimulationError::InvalidAnswer(
                            "empty or disallowed Other answer".into(),
                        ));
                    }
                    Ok(Answer::OtherText(value))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::TieredMatcher;
    use crate::oracle::{ScriptedBackend, ScriptedRenderer};
    use std::sync::Arc;

    fn case(motif: &str) -> BenchmarkCase {
        BenchmarkCase {
            case_id: "c".into(),
            initial_prompt: "a logo for a hiking club".into(),
            category: "logo design".into(),
            ground_truth: GroundTruth::SyntheticIntent(BTreeMap::from([("motif".into(), motif.into())])),
            feature_weights: BTreeMap::new(),
        }
    }

    fn query() -> CandidateQuery {
        CandidateQuery::new("motif", &["mountain", "boots"], 1.0)
    }

    #[test]
    fn scripted_user_picks_the_matching_option() {
        let user = SimulatedUser::scripted(&case("mountain")).unwrap();
        assert_eq!(
            simulate_answer(&user, &query(), &TieredMatcher).unwrap(),
            Answer::OptionIndex(0)
        );
    }

    #[test]
    fn scripted_user_falls_back_to_other_with_the_true_value() {
        let user = SimulatedUser::scripted(&case("paw print")).unwrap();
        assert_eq!(
            simulate_answer(&user, &query(), &TieredMatcher).unwrap(),
            Answer::OtherText("paw print".into())
        );
    }

    #[test]
    fn llm_user_forwards_only_the_selection() {
        let backend = ScriptedBackend::new(true).wildcard(
            OracleKind::SimulateAnswer,
            json!({"reasoning": "the club hikes in the alps so mountain fits", "answer": {"option_index": 0}}),
        );
        let clients = Clients::new(Arc::new(backend), Arc::new(ScriptedRenderer::default()));
        let user = SimulatedUser::llm_backed(UserKind::IntentBased, &case("mountain"), clients.clone()).unwrap();
        let answer = simulate_answer(&user, &query(), &TieredMatcher).unwrap();
        assert_eq!(answer, Answer::OptionIndex(0));
        let record = serde_json::to_string(&answer).unwrap();
        assert!(!record.contains("alps"));
        assert_eq!(record, r#"{"option_index":0}"#);
    }

    #[test]
    fn llm_user_out_of_range_index_is_an_error() {
        let backend =
            ScriptedBackend::new(true).wildcard(OracleKind::SimulateAnswer, json!({"answer": {"option_index": 9}}));
        let clients = Clients::new(Arc::new(backend), Arc::new(ScriptedRenderer::default()));
        let user = SimulatedUser::llm_backed(UserKind::IntentBased, &case("mountain"), clients).unwrap();
        assert!(simulate_answer(&user, &query(), &TieredMatcher).is_err());
    }
}
