//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use elicit_core::oracle::{RetryPolicy, ScriptedBackend, ScriptedRenderer};
use elicit_core::query::compute_eaug;
use elicit_core::simulation::{BenchmarkCase, SyntheticWorld};
use elicit_core::{CandidateQuery, Clients, ScoredQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` candidates with 2 to 5 options plus a residual bucket and random
/// normalized distributions.
pub fn random_candidates(n: usize, seed: u64) -> Vec<CandidateQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let options = rng.gen_range(2..=5);
            let labels: Vec<String> = (0..options).map(|o| format!("value {o}")).collect();
            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
            let mut q = CandidateQuery::new(format!("feature {i}"), &labels, rng.gen());
            let raw: Vec<f64> = (0..=options).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let rest: f64 = p[1..].iter().sum();
            p[0] = 1.0 - rest;
            q.option_distribution = Some(p);
            q
        })
        .collect()
}

pub fn scored(candidates: &[CandidateQuery]) -> Vec<ScoredQuery> {
    candidates
        .iter()
        .map(|q| compute_eaug(q).expect("valid fixture"))
        .collect()
}

/// In-memory clients answering from a synthetic world built for `case`.
pub fn world_clients(case: &BenchmarkCase, seed: u64) -> Clients {
    let world = SyntheticWorld::new(case, seed);
    Clients::new(
        Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(world))),
        Arc::new(ScriptedRenderer::default()),
    )
    .with_retry(RetryPolicy::immediate())
}
