//! Whole-session invariants under random operation sequences.

use std::collections::BTreeSet;
use std::sync::Arc;

use elicit_core::oracle::{RetryPolicy, ScriptedBackend, ScriptedRenderer};
use elicit_core::session::{replay_dir, RequirementEdit, SessionStore};
use elicit_core::simulation::{generate_cases, SyntheticWorld};
use elicit_core::{Answer, Budget, Clients, EngineConfig, Session, SessionError, Status};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Pick(usize),
    Other(String),
    Add(String, String),
    Modify(usize, String),
    Delete(usize),
    Generate,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0usize..7).prop_map(Op::Pick),
        1 => "[a-z]{3,10}( [a-z]{2,8})?".prop_map(Op::Other),
        1 => ("[a-z]{3,8}", "[a-z]{3,8}").prop_map(|(f, v)| Op::Add(f, v)),
        1 => (0usize..6, "[a-z]{3,8}").prop_map(|(i, v)| Op::Modify(i, v)),
        1 => (0usize..6).prop_map(Op::Delete),
        2 => Just(Op::Generate),
    ]
}

fn session(dir: &std::path::Path, case_seed: u64, budget: Budget) -> Session {
    let case = generate_cases(1, case_seed, 2..=6).remove(0);
    let world = SyntheticWorld::new(&case, case_seed);
    let store = SessionStore::create(dir).unwrap();
    let clients = Clients::new(
        Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(world))),
        Arc::new(ScriptedRenderer::default()),
    )
    .with_retry(RetryPolicy::immediate())
    .with_journal(store.journal().unwrap())
    .with_media(store.media().unwrap());
    let config = EngineConfig {
        budget,
        seed: case_seed,
        ..EngineConfig::default()
    };
    Session::create("prop", &case.initial_prompt, config, clients, Some(store)).unwrap()
}

fn apply(session: &mut Session, op: &Op) -> Result<(), SessionError> {
    let features: Vec<String> = session
        .state()
        .specification
        .requirements()
        .iter()
        .map(|r| r.feature.clone())
        .collect();
    let pick = |i: usize| {
        features
            .get(i % features.len().max(1))
            .cloned()
            .unwrap_or_else(|| "missing".into())
    };
    match op {
        Op::Pick(i) => session.answer(Answer::OptionIndex(*i)),
        Op::Other(text) => session.answer(Answer::OtherText(text.clone())),
        Op::Add(f, v) => session.edit(&[RequirementEdit::Add {
            feature: f.clone(),
            value: v.clone(),
        }]),
        Op::Modify(i, v) => session.edit(&[RequirementEdit::Modify {
            feature: pick(*i),
            value: v.clone(),
        }]),
        Op::Delete(i) => session.edit(&[RequirementEdit::Delete { feature: pick(*i) }]),
        Op::Generate => session.generate(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_accepted_operation_is_logged_and_replayable(
        case_seed in 0u64..500,
        ops in proptest::collection::vec(op(), 1..14),
        max_iterations in 1u32..6,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let budget = Budget { max_iterations, max_candidates: 3, max_options: 4 };
        let mut s = session(dir.path(), case_seed, budget.clone());
        for op in &ops {
            let before = s.state().clone();
            match apply(&mut s, op) {
                Ok(()) => {
                    let after = s.state();
                    prop_assert_eq!(after.events.len(), before.events.len() + 1, "{:?}", op);
                    prop_assert_eq!(after.revision, before.revision + 1);
                }
                Err(_) => {
                    // Rejected operations leave no trace.
                    prop_assert_eq!(s.state(), &before, "{:?}", op);
                }
            }
            let state = s.state();
            let features: BTreeSet<&str> = state.specification.features().collect();
            prop_assert_eq!(features.len(), state.specification.len());
            prop_assert_eq!(state.status == Status::AwaitingAnswer, state.active_query.is_some());
            prop_assert!(state.answered_rounds() <= max_iterations as usize);
            for round in &state.rounds {
                prop_assert!(round.candidates.len() <= budget.max_candidates);
            }
            if let Some(active) = &state.active_query {
                prop_assert!(active.query.options.len() <= budget.max_options);
            }
            for (i, event) in state.events.iter().enumerate() {
                prop_assert_eq!(event.seq, i as u64 + 1);
            }
        }
        drop(s);
        let report = replay_dir(dir.path()).unwrap();
        prop_assert!(report.is_match(), "{:?}", report);
    }
}

#[test]
fn same_seed_and_answers_give_identical_sessions() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path(), 42, Budget::default());
        for op in [
            Op::Pick(0),
            Op::Generate,
            Op::Pick(1),
            Op::Other("misty teal".into()),
            Op::Generate,
        ] {
            apply(&mut s, &op).unwrap();
        }
        elicit_core::session::projection(s.state())
    };
    assert_eq!(run(), run());
}
