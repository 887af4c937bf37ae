use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::oracle::{JournalRecord, OracleKind, RetryPolicy, ScriptedBackend, ScriptedRenderer};
use crate::simulation::{generate_cases, SyntheticWorld};

fn world_clients(seed: u64) -> (Clients, crate::simulation::BenchmarkCase) {
    let case = generate_cases(1, seed, 4..=4).remove(0);
    let world = SyntheticWorld::new(&case, seed);
    let clients = Clients::new(
        Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(world))),
        Arc::new(ScriptedRenderer::default()),
    )
    .with_retry(RetryPolicy::immediate());
    (clients, case)
}

fn config(seed: u64) -> EngineConfig {
    EngineConfig {
        seed,
        ..EngineConfig::default()
    }
}

#[test]
fn create_prepares_a_first_query() {
    let (clients, case) = world_clients(3);
    let s = Session::create("s1", &case.initial_prompt, config(3), clients, None).unwrap();
    let state = s.state();
    assert_eq!(state.status, Status::AwaitingAnswer);
    assert_eq!(state.specification.get("subject").unwrap().value, case.initial_prompt);
    let active = state.active_query.as_ref().unwrap();
    assert!(active.query.options.len() <= 5);
    assert!(active.query.options.iter().all(|o| o.exemplar_image.is_some()));
    assert!(state.events.is_empty());
}

#[test]
fn empty_prompt_is_rejected() {
    let (clients, _) = world_clients(3);
    assert_eq!(
        Session::create("s", "   ", config(3), clients, None).err(),
        Some(SessionError::EmptyPrompt)
    );
}

#[test]
fn same_prompt_and_seed_give_the_same_first_query() {
    let (a, case) = world_clients(5);
    let (b, _) = world_clients(5);
    let first = Session::create("a", &case.initial_prompt, config(9), a, None).unwrap();
    let second = Session::create("b", &case.initial_prompt, config(9), b, None).unwrap();
    assert_eq!(first.state().active_query, second.state().active_query);
    assert_eq!(first.state().rounds, second.state().rounds);
}

#[test]
fn answering_logs_one_event_and_advances() {
    let (clients, case) = world_clients(4);
    let mut s = Session::create("s", &case.initial_prompt, config(1), clients, None).unwrap();
    let feature = s.state().active_query.as_ref().unwrap().query.feature.clone();
    s.answer(Answer::OptionIndex(0)).unwrap();
    let state = s.state();
    assert!(state.specification.contains(&feature));
    assert_eq!(state.events.len(), 1);
    assert_eq!(state.events[0].action.type_name(), "select_answer_option");
    assert_ne!(
        state.active_query.as_ref().map(|q| q.query.feature.clone()),
        Some(feature)
    );
    assert_eq!(state.revision, 1);
}

#[test]
fn out_of_range_answer_leaves_state_unchanged() {
    let (clients, case) = world_clients(4);
    let mut s = Session::create("s", &case.initial_prompt, config(1), clients, None).unwrap();
    let before = s.state().clone();
    let err = s.answer(Answer::OptionIndex(99)).unwrap_err();
    assert!(matches!(err, SessionError::InvalidOptionIndex { index: 99, .. }));
    assert_eq!(
        s.answer(Answer::OtherText("  ".into())).unwrap_err(),
        SessionError::EmptyOtherText
    );
    assert_eq!(s.state(), &before);
}

#[test]
fn other_answer_is_stored_verbatim() {
    let (clients, case) = world_clients(4);
    let mut s = Session::create("s", &case.initial_prompt, config(1), clients, None).unwrap();
    let feature = s.state().active_query.as_ref().unwrap().query.feature.clone();
    s.answer(Answer::OtherText("Paw Print".into())).unwrap();
    let req = s.state().specification.get(&feature).unwrap();
    assert_eq!(req.value, "Paw Print");
    assert_eq!(req.origin, Origin::OtherAnswer);
    assert_eq!(s.state().events[0].action.type_name(), "provide_other_answer");
}

#[test]
fn generate_keeps_the_active_query() {
    let (clients, case) = world_clients(6);
    let mut s = Session::create("s", &case.initial_prompt, config(2), clients, None).unwrap();
    let active = s.state().active_query.clone();
    s.generate().unwrap();
    let state = s.state();
    assert_eq!(state.status, Status::AwaitingAnswer);
    assert_eq!(state.active_query, active);
    assert_eq!(state.generations.len(), 1);
    assert!(state.generations[0].image.is_some());
    assert_eq!(state.events[0].action, Action::GeneratePrompt { index: 1 });
}

#[test]
fn edits_log_one_event_each_with_a_shared_batch() {
    let (clients, case) = world_clients(6);
    let mut s = Session::create("s", &case.initial_prompt, config(2), clients, None).unwrap();
    s.edit(&[
        RequirementEdit::Add {
            feature: "Border".into(),
            value: "thin gold".into(),
        },
        RequirementEdit::Modify {
            feature: "subject".into(),
            value: "a badge for a hiking club".into(),
        },
    ])
    .unwrap();
    s.edit(&[RequirementEdit::Delete {
        feature: "border".into(),
    }])
    .unwrap();
    let events = &s.state().events;
    assert_eq!(events.len(), 3);
    assert_eq!(events[0].action.type_name(), "add_requirement");
    assert_eq!(events[1].action.type_name(), "modify_requirement");
    assert_eq!(events[0].action.batch(), events[1].action.batch());
    assert_ne!(events[1].action.batch(), events[2].action.batch());
    assert!(matches!(
        &events[2].action,
        Action::ModifyRequirement { value: None, .. }
    ));
    assert!(!s.state().specification.contains("border"));
    assert_eq!(
        s.state().specification.get("subject").unwrap().origin,
        Origin::ManualEdit
    );
}

#[test]
fn invalid_edit_batch_is_atomic() {
    let (clients, case) = world_clients(6);
    let mut s = Session::create("s", &case.initial_prompt, config(2), clients, None).unwrap();
    let before = s.state().clone();
    let err = s
        .edit(&[
            RequirementEdit::Add {
                feature: "border".into(),
                value: "gold".into(),
            },
            RequirementEdit::Delete {
                feature: "never set".into(),
            },
        ])
        .unwrap_err();
    assert!(matches!(err, SessionError::InvalidEdit(_)));
    assert_eq!(s.state(), &before);
}

#[test]
fn closed_sessions_reject_everything() {
    let (clients, case) = world_clients(6);
    let mut s = Session::create("s", &case.initial_prompt, config(2), clients, None).unwrap();
    s.close().unwrap();
    assert!(matches!(
        s.answer(Answer::OptionIndex(0)),
        Err(SessionError::WrongState { .. })
    ));
    assert!(matches!(s.generate(), Err(SessionError::WrongState { .. })));
    assert!(matches!(
        s.edit(&[RequirementEdit::Delete {
            feature: "subject".into()
        }]),
        Err(SessionError::WrongState { .. })
    ));
}

#[test]
fn exhaustion_leaves_the_session_idle() {
    let (clients, case) = world_clients(8);
    let mut s = Session::create("s", &case.initial_prompt, config(2), clients, None).unwrap();
    let mut n = 0;
    while s.state().status == Status::AwaitingAnswer {
        s.answer(Answer::OptionIndex(0)).unwrap();
        n += 1;
        assert!(n <= 15);
    }
    assert_eq!(s.state().status, Status::Idle);
    assert!(s.state().exhausted);
    assert!(s.state().last_error.is_none());
    s.generate().unwrap();
    assert_eq!(s.state().status, Status::Idle);
}

#[test]
fn oracle_failure_during_preparation_is_recorded_not_raised() {
    let backend = ScriptedBackend::new(true)
        .wildcard(
            OracleKind::ExtractFeatures,
            json!({"requirements": [{"feature": "theme", "value": "hiking"}]}),
        )
        .wildcard(OracleKind::Guidelines, json!({"guidelines": "be concise"}));
    let clients =
        Clients::new(Arc::new(backend), Arc::new(ScriptedRenderer::default())).with_retry(RetryPolicy::immediate());
    let s = Session::create("s", "a hiking logo", config(1), clients, None).unwrap();
    assert_eq!(s.state().status, Status::Idle);
    assert!(s.state().last_error.as_deref().unwrap().contains("propose_features"));
}

#[test]
fn exemplar_renders_share_seed_and_parameters_per_round() {
    let (clients, case) = world_clients(10);
    let mut s = Session::create("s", &case.initial_prompt, config(4), clients, None).unwrap();
    s.answer(Answer::OptionIndex(1)).unwrap();
    let mut per_round: BTreeMap<u32, Vec<(u64, crate::oracle::RenderParameters)>> = BTreeMap::new();
    for entry in s.clients().journal().entries() {
        if let JournalRecord::RenderRequest {
            request,
            purpose: crate::oracle::RenderPurpose::Exemplar { round, .. },
        } = entry.record
        {
            per_round
                .entry(round)
                .or_default()
                .push((request.seed, request.parameters));
        }
    }
    assert_eq!(per_round.len(), 2);
    for (round, renders) in per_round {
        assert!(renders.windows(2).all(|w| w[0] == w[1]), "round {round}");
        assert_eq!(renders[0].0, exemplar_seed(4, round));
    }
}

#[test]
fn persisted_session_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::create(dir.path().join("s")).unwrap();
    let (clients, case) = world_clients(12);
    let clients = clients
        .with_journal(store.journal().unwrap())
        .with_media(store.media().unwrap());
    let mut s = Session::create("s", &case.initial_prompt, config(7), clients, Some(store.clone())).unwrap();
    s.answer(Answer::OptionIndex(0)).unwrap();
    s.generate().unwrap();
    s.edit(&[RequirementEdit::Add {
        feature: "border".into(),
        value: "thin gold".into(),
    }])
    .unwrap();
    s.answer(Answer::OtherText("something custom".into())).unwrap();
    let report = replay_dir(store.dir()).unwrap();
    assert!(report.is_match(), "{:#?}", report);
    assert_eq!(report.events, 4);
    assert_eq!(store.read_events().unwrap().len(), 4);
}

#[test]
fn tampered_journal_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::create(dir.path().join("s")).unwrap();
    let (clients, case) = world_clients(12);
    let clients = clients.with_journal(store.journal().unwrap());
    let mut s = Session::create("s", &case.initial_prompt, config(7), clients, Some(store.clone())).unwrap();
    s.answer(Answer::OptionIndex(0)).unwrap();
    s.generate().unwrap();
    let path = store.journal_path();
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen(DETAIL_MARK, "tampered detail", 1);
    assert_ne!(text, tampered);
    std::fs::write(&path, tampered).unwrap();
    let report = replay_dir(store.dir()).unwrap();
    assert!(!report.is_match());
}

const DETAIL_MARK: &str = crate::simulation::DETAIL_SUFFIX;

#[test]
fn service_resumes_sessions_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let case = generate_cases(1, 12, 4..=4).remove(0);
    let backends = || Backends {
        language: Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(SyntheticWorld::new(&case, 12)))),
        renderer: Arc::new(ScriptedRenderer::default()),
        retry: RetryPolicy::immediate(),
    };
    let id;
    let before;
    {
        let service = SessionService::open(dir.path(), backends(), config(3)).unwrap();
        let created = service.create(&case.initial_prompt, None).unwrap();
        id = created.session_id.clone();
        service
            .answer(&id, Answer::OptionIndex(0), Some(created.revision))
            .unwrap();
        let err = service.generate(&id, Some(0)).unwrap_err();
        assert!(matches!(err, SessionError::RevisionConflict { expected: 0, actual: 1 }));
        before = service.generate(&id, Some(1)).unwrap();
    }
    let service = SessionService::open(dir.path(), backends(), config(3)).unwrap();
    let resumed = service.get(&id).unwrap();
    assert_eq!(resumed, before);
    let after = service.answer(&id, Answer::OptionIndex(0), None).unwrap();
    assert_eq!(after.events.len(), 3);
    let report = replay_dir(&dir.path().join(&id)).unwrap();
    assert!(report.is_match(), "{:#?}", report);
}

#[test]
fn lagging_snapshot_is_rebuilt_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let case = generate_cases(1, 2, 3..=3).remove(0);
    let backends = Backends {
        language: Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(SyntheticWorld::new(&case, 2)))),
        renderer: Arc::new(ScriptedRenderer::default()),
        retry: RetryPolicy::immediate(),
    };
    let service = SessionService::open(dir.path(), backends.clone(), config(3)).unwrap();
    let created = service.create(&case.initial_prompt, Some(8)).unwrap();
    let id = created.session_id.clone();
    let store = SessionStore::open(dir.path().join(&id)).unwrap();
    let stale = store.read_snapshot().unwrap().unwrap();
    let latest = service.answer(&id, Answer::OptionIndex(1), None).unwrap();
    store.write_snapshot(&stale).unwrap();
    drop(service);

    let service = SessionService::open(dir.path(), backends, config(3)).unwrap();
    let resumed = service.get(&id).unwrap();
    assert_eq!(projection(&resumed), projection(&latest));
}
