//! Acceptance suite. Runs every primary criterion on scripted backends and
//! prints one PASS/FAIL line each; exits nonzero if any fails.
//!
//! `cargo test -p elicit-cli --test acceptance`

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use elicit_cli::{cmd_record, cmd_replay};
use elicit_core::oracle::{Clients, JournalEntry, JournalRecord, Outcome, RenderPurpose, RetryPolicy};
use elicit_core::query::{compute_eaug, select_query};
use elicit_core::session::{exemplar_seed, SessionStore};
use elicit_core::simulation::{
    generate_cases, metric, run_benchmark, run_elicitation, world_seed, BackendProvider, BenchmarkCase,
    BenchmarkConfig, ScriptedProvider, SimulatedUser, Strategy, UserKind, REASONING_MARKER,
};
use elicit_core::{Budget, CandidateQuery, EngineConfig, ScoredQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct OracleCase {
    weight: f64,
    p: Vec<f64>,
    has_residual: bool,
    entropy: String,
    eaug: String,
}

fn query_for(weight: f64, p: &[f64], has_residual: bool) -> CandidateQuery {
    let options = p.len() - usize::from(has_residual);
    let labels: Vec<String> = (0..options).map(|i| format!("option {i}")).collect();
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut q = CandidateQuery::new("feature", &labels, weight);
    q.has_residual = has_residual;
    q.option_distribution = Some(p.to_vec());
    q
}

fn eaug_correctness() -> Verdict {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eaug_oracle.json");
    let fixture: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let cases: Vec<OracleCase> = serde_json::from_value(fixture["cases"].clone()).unwrap();
    let mut worst: f64 = 0.0;
    for case in &cases {
        let scored = compute_eaug(&query_for(case.weight, &case.p, case.has_residual)).unwrap();
        let eaug: f64 = case.eaug.parse().unwrap();
        let entropy: f64 = case.entropy.parse().unwrap();
        worst = worst
            .max((scored.eaug - eaug).abs())
            .max((scored.entropy - entropy).abs());
    }
    let mut uniform_worst: f64 = 0.0;
    for m in 1..=6usize {
        let p = vec![1.0 / m as f64; m];
        let s = compute_eaug(&query_for(1.0, &p, m >= 2)).unwrap();
        uniform_worst = uniform_worst.max((s.entropy - (m as f64).ln()).abs());
    }
    let mut degenerate_ok = true;
    for m in 1..=6usize {
        for hot in 0..m {
            let mut p = vec![0.0; m];
            p[hot] = 1.0;
            let s = compute_eaug(&query_for(0.7, &p, m >= 2)).unwrap();
            degenerate_ok &= s.entropy == 0.0 && s.eaug == 0.0;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        cases.len() == 1000 && worst <= 1e-9 && uniform_worst <= 1e-12 && degenerate_ok && within(elapsed, Duration::from_secs(5)),
        format!(
            "{} oracle cases, max abs err {worst:.2e} (tol 1e-9); uniform max err {uniform_worst:.2e} (tol 1e-12); degenerate zero: {degenerate_ok}; {elapsed:.2?} (limit 5s)",
            cases.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn brute_force_argmax(scored: &[ScoredQuery]) -> usize {
    let best = scored.iter().map(|s| s.eaug).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].eaug == best).collect();
    let best_weight = tied
        .iter()
        .map(|&i| scored[i].query.weight)
        .fold(f64::NEG_INFINITY, f64::max);
    *tied.iter().find(|&&i| scored[i].query.weight == best_weight).unwrap()
}

fn random_distribution(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    if rng.gen_bool(0.15) {
        let mut p = vec![0.0; m];
        p[rng.gen_range(0..m)] = 1.0;
        return p;
    }
    let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 1e-12).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = (1.0 - rest).max(0.0);
    p
}

fn argmax_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut mismatches = 0;
    let mut scale_changes = 0;
    let mut with_ties = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=8);
        let mut scored = Vec::with_capacity(n);
        for i in 0..n {
            // Copies of an earlier candidate create exact eaug ties.
            let q = if i > 0 && rng.gen_bool(0.2) {
                let src: &ScoredQuery = &scored[rng.gen_range(0..i)];
                let mut q = src.query.clone();
                if rng.gen_bool(0.5) {
                    q.weight = rng.gen();
                }
                q
            } else {
                let m = rng.gen_range(1..=6);
                query_for(rng.gen(), &random_distribution(&mut rng, m), m >= 2)
            };
            scored.push(compute_eaug(&q).unwrap());
        }
        let best = scored.iter().map(|s| s.eaug).fold(f64::NEG_INFINITY, f64::max);
        if scored.iter().filter(|s| s.eaug == best).count() > 1 {
            with_ties += 1;
        }
        let picked = select_query(&scored).unwrap();
        if picked != brute_force_argmax(&scored) {
            mismatches += 1;
        }
        let c: f64 = if rng.gen_bool(0.5) {
            rng.gen_range(1e-3..1.0)
        } else {
            rng.gen_range(1.0..1e3)
        };
        let scaled: Vec<ScoredQuery> = scored
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.query.weight *= c;
                s.eaug = s.query.weight * s.entropy;
                s
            })
            .collect();
        if select_query(&scaled).unwrap() != picked {
            scale_changes += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && scale_changes == 0 && within(elapsed, Duration::from_secs(10)),
        format!(
            "10000 sets ({with_ties} with eaug ties): {mismatches} mismatches, {scale_changes} argmax changes under scaling; {elapsed:.2?} (limit 10s)"
        ),
    )
}

// ---------------------------------------------------------------------------

fn engine_clients(provider: &dyn BackendProvider, case: &BenchmarkCase, world: u64) -> Clients {
    let (language, renderer) = provider.engine(case, world);
    Clients::new(language, renderer).with_retry(RetryPolicy::immediate())
}

fn convergence() -> Verdict {
    let provider = ScriptedProvider::default();
    let cases = generate_cases(100, 2024, 2..=8);
    let config = EngineConfig::default();
    let mut converged = 0;
    let mut over_budget = 0;
    let mut slowest = 0.0f64;
    for case in &cases {
        let f = case.truth_features().len() as u32;
        let user = SimulatedUser::scripted(case).unwrap();
        let world = world_seed(config.seed, &case.case_id, 0);
        let trace = run_elicitation(
            case,
            &user,
            Strategy::Ape,
            &config,
            engine_clients(&provider, case, world),
            0,
        )
        .unwrap();
        if trace.iterations.len() > config.budget.max_iterations as usize {
            over_budget += 1;
        }
        let first_full = trace
            .iterations
            .iter()
            .find(|r| r.scores.get(metric::FEATURE_COVERAGE) == Some(&1.0))
            .map(|r| r.iteration);
        match first_full {
            Some(i) if i <= f => {
                converged += 1;
                slowest = slowest.max(i as f64 / f as f64);
            }
            _ => {}
        }
    }
    verdict(
        converged == 100 && over_budget == 0,
        format!(
            "{converged}/100 intents (F in 2..=8) reached feature coverage 1.0 within F iterations (max iterations/F = {slowest:.2}); {over_budget} traces over the 15-iteration budget"
        ),
    )
}

// ---------------------------------------------------------------------------

fn informed_ordering() -> Verdict {
    let provider = ScriptedProvider::default();
    let cases = generate_cases(120, 77, 2..=8);
    let mut diffs = Vec::new();
    let (mut ape_sum, mut random_sum) = (0.0, 0.0);
    for case in &cases {
        let f = case.truth_features().len() as u32;
        let budget = Budget {
            max_iterations: f.div_ceil(2),
            ..Budget::default()
        };
        let user = SimulatedUser::scripted(case).unwrap();
        let world = world_seed(1, &case.case_id, 0);
        let mut finals = Vec::new();
        for strategy in [Strategy::Ape, Strategy::Random] {
            let config = EngineConfig {
                budget: budget.clone(),
                seed: elicit_core::simulation::run_seed(1, &case.case_id, strategy, 0),
                ..EngineConfig::default()
            };
            let trace = run_elicitation(
                case,
                &user,
                strategy,
                &config,
                engine_clients(&provider, case, world),
                0,
            )
            .unwrap();
            finals.push(trace.final_value(metric::WEIGHTED_COVERAGE).unwrap_or(0.0));
        }
        ape_sum += finals[0];
        random_sum += finals[1];
        diffs.push(finals[0] - finals[1]);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var.sqrt() / n.sqrt());
    let p = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t);
    verdict(
        p < 0.05 && mean > 0.0,
        format!(
            "{} trials, B = ceil(F/2): mean weighted coverage ape {:.4} vs random {:.4}; paired t = {t:.2}, one-sided p = {p:.2e} (alpha 0.05)",
            diffs.len(),
            ape_sum / n,
            random_sum / n
        ),
    )
}

// ---------------------------------------------------------------------------

fn curve(points: &[elicit_core::simulation::CurvePoint], strategy: Strategy) -> Vec<f64> {
    let mut pts: Vec<_> = points
        .iter()
        .filter(|p| p.strategy == strategy && p.metric == metric::FEATURE_COVERAGE)
        .collect();
    pts.sort_by_key(|p| p.iteration);
    pts.iter().map(|p| p.mean).collect()
}

fn protocol_shape() -> Verdict {
    let start = Instant::now();
    let cases = generate_cases(5, 31, 3..=6);
    let config = BenchmarkConfig {
        runs_per_case: 5,
        seed: 31,
        parallelism: 4,
        ..BenchmarkConfig::default()
    };
    let result = run_benchmark(&cases, &Strategy::PROTOCOL, &config, &ScriptedProvider::default()).unwrap();
    let elapsed = start.elapsed();
    let ape = curve(&result.curves, Strategy::Ape);
    let in_context = curve(&result.curves, Strategy::InContext);
    let monotone = ape.windows(2).all(|w| w[1] >= w[0]);
    let dominates =
        !ape.is_empty() && ape.len() == in_context.len() && ape.iter().zip(&in_context).all(|(a, b)| a >= b);
    let flat = [Strategy::Apo, Strategy::Unoptimized].iter().all(|s| {
        let c = curve(&result.curves, *s);
        !c.is_empty() && c.iter().all(|v| *v == c[0])
    });
    let complete = result.failures.is_empty() && result.traces.len() == 5 * 4 * 5;
    verdict(
        monotone && dominates && flat && complete && within(elapsed, Duration::from_secs(120)),
        format!(
            "{} traces, {} failures; ape monotone: {monotone}; ape >= in_context at every iteration: {dominates}; apo/unoptimized flat: {flat}; ape final {:.3} vs in_context {:.3}; {elapsed:.2?} (limit 2min)",
            result.traces.len(),
            result.failures.len(),
            ape.last().copied().unwrap_or(f64::NAN),
            in_context.last().copied().unwrap_or(f64::NAN),
        ),
    )
}

// ---------------------------------------------------------------------------

fn reasoning_texts(entries: &[JournalEntry]) -> Vec<String> {
    entries
        .iter()
        .filter_map(|e| match &e.record {
            JournalRecord::OracleResponse {
                outcome: Outcome::Ok(v),
                ..
            } => v.get("reasoning").and_then(Value::as_str).map(str::to_string),
            _ => None,
        })
        .collect()
}

fn leakage_guard() -> Verdict {
    let cases = generate_cases(6, 5, 2..=6);
    let mut runs = 0;
    let mut reasoning_seen = 0;
    let mut leaks = Vec::new();
    for user in [UserKind::IntentBased, UserKind::VisionBased] {
        let config = BenchmarkConfig {
            runs_per_case: 2,
            seed: 5,
            parallelism: 4,
            user: Some(user),
            ..BenchmarkConfig::default()
        };
        let strategies = [Strategy::Ape, Strategy::InContext, Strategy::Random];
        let result = run_benchmark(&cases, &strategies, &config, &ScriptedProvider::default()).unwrap();
        for trace in &result.traces {
            runs += 1;
            let reasoning = reasoning_texts(&trace.user_journal);
            reasoning_seen += reasoning.len();
            let engine = serde_json::to_string(&trace.engine_journal).unwrap();
            let record = serde_json::to_string(trace).unwrap();
            for (name, text) in [("engine journal", &engine), ("trace", &record)] {
                if text.contains(REASONING_MARKER) || reasoning.iter().any(|r| text.contains(r.as_str())) {
                    leaks.push(format!(
                        "{} {} run {}: {name}",
                        trace.case_id, trace.strategy, trace.run
                    ));
                }
            }
        }
    }
    verdict(
        leaks.is_empty() && reasoning_seen > 0,
        format!(
            "{runs} LLM-simulated runs, {reasoning_seen} simulator reasoning texts, {} leaks into engine-visible records{}",
            leaks.len(),
            leaks.first().map(|l| format!(" (first: {l})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

fn replay_determinism(recorded: &[std::path::PathBuf]) -> Verdict {
    let mut ok = 0;
    let mut failed = Vec::new();
    for dir in recorded {
        let mut out = Vec::new();
        match cmd_replay(dir, &mut out) {
            0 => ok += 1,
            code => failed.push(format!(
                "{} exit {code}: {}",
                dir.display(),
                String::from_utf8_lossy(&out)
            )),
        }
    }
    verdict(
        ok == recorded.len() && recorded.len() == 20,
        format!(
            "{ok}/{} recorded sessions replayed identically{}",
            recorded.len(),
            failed
                .first()
                .map(|f| format!("; first failure: {f}"))
                .unwrap_or_default()
        ),
    )
}

fn seed_discipline(recorded: &[std::path::PathBuf]) -> Verdict {
    let mut queries = 0;
    let mut violations = Vec::new();
    for dir in recorded {
        let store = SessionStore::open(dir).unwrap();
        let meta = store.read_meta().unwrap();
        let mut rounds: BTreeMap<u32, Vec<(u64, Value)>> = BTreeMap::new();
        for entry in store.journal_entries().unwrap() {
            if let JournalRecord::RenderRequest {
                request,
                purpose: RenderPurpose::Exemplar { round, .. },
            } = entry.record
            {
                rounds
                    .entry(round)
                    .or_default()
                    .push((request.seed, serde_json::to_value(&request.parameters).unwrap()));
            }
        }
        for (round, renders) in &rounds {
            queries += 1;
            let (seed, params) = &renders[0];
            let shared = renders.iter().all(|(s, p)| s == seed && p == params);
            if !shared || *seed != exemplar_seed(meta.config.seed, *round) {
                violations.push(format!("{} round {round}", dir.display()));
            }
        }
    }
    verdict(
        violations.is_empty() && queries > 0,
        format!(
            "{queries} exemplar queries across {} render journals; {} with mixed seeds or parameters",
            recorded.len(),
            violations.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let recorded = cmd_record(&scratch.path().join("recorded"), 20, 8, 4, &EngineConfig::default()).unwrap();

    let criteria: Vec<Criterion> = vec![
        ("eaug correctness", Box::new(eaug_correctness)),
        ("argmax equivalence", Box::new(argmax_equivalence)),
        ("convergence bound", Box::new(convergence)),
        ("informed ordering", Box::new(informed_ordering)),
        ("protocol shape", Box::new(protocol_shape)),
        ("leakage guard", Box::new(leakage_guard)),
        ("replay determinism", Box::new(|| replay_determinism(&recorded))),
        ("seed discipline", Box::new(|| seed_discipline(&recorded))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
