use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::case::BenchmarkCase;
use super::user::{simulate_answer, SimulatedUser, UserKind};
use super::world::{SyntheticWorld, WorldOptions};
use super::SimulationError;
use crate::config::{derive_seed, EngineConfig, SelectionPolicy};
use crate::intent::Specification;
use crate::matcher::TieredMatcher;
use crate::metrics::{score_feature_coverage, weighted_coverage, CoverageTarget, HashCosineScorer, Scorer};
use crate::oracle::{
    Clients, ImageHandle, JournalEntry, LanguageBackend, OracleKind, OracleReply, RenderBackend, RenderPurpose,
    RetryPolicy, ScriptedBackend, ScriptedRenderer,
};
use crate::query::Answer;
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ape,
    InContext,
    Apo,
    Unoptimized,
    /// Same loop as `ape` with a uniformly random query; comparison baseline.
    Random,
}

impl Strategy {
    pub const PROTOCOL: [Strategy; 4] = [Strategy::Ape, Strategy::InContext, Strategy::Apo, Strategy::Unoptimized];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ape => "ape",
            Strategy::InContext => "in_context",
            Strategy::Apo => "apo",
            Strategy::Unoptimized => "unoptimized",
            Strategy::Random => "random",
        }
    }

    fn selection(self) -> Option<SelectionPolicy> {
        match self {
            Strategy::Ape => Some(SelectionPolicy::Eaug),
            Strategy::InContext => Some(SelectionPolicy::FirstProposed),
            Strategy::Random => Some(SelectionPolicy::UniformRandom),
            Strategy::Apo | Strategy::Unoptimized => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "ape" => Strategy::Ape,
            "in_context" | "in-context" => Strategy::InContext,
            "apo" => Strategy::Apo,
            "unoptimized" => Strategy::Unoptimized,
            "random" => Strategy::Random,
            other => return Err(SimulationError::UnknownStrategy(other.to_string())),
        })
    }
}

pub mod metric {
    pub const FEATURE_COVERAGE: &str = "feature_coverage";
    pub const WEIGHTED_COVERAGE: &str = "weighted_coverage";
    pub const SPEC_COVERAGE: &str = "spec_coverage";
    pub const TEXT_SIMILARITY: &str = "text_similarity";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub feature: Option<String>,
    pub options: Vec<String>,
    pub eaug: Option<f64>,
    pub answer: Option<Answer>,
    pub spec_revision: u64,
    pub specification: Option<Specification>,
    pub prompt: String,
    pub image: Option<ImageHandle>,
    pub scores: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub case_id: String,
    pub category: String,
    pub strategy: Strategy,
    pub run: u32,
    pub run_seed: u64,
    pub iterations: Vec<IterationRecord>,
    /// The engine's oracle and render journal.
    #[serde(skip)]
    pub engine_journal: Vec<JournalEntry>,
    /// The simulated user's own journal (LLM-backed users only).
    #[serde(skip)]
    pub user_journal: Vec<JournalEntry>,
}

impl RunTrace {
    /// Metric value at `iteration`, carrying the last value forward past the end.
    pub fn value_at(&self, metric: &str, iteration: u32) -> Option<f64> {
        self.iterations
            .iter()
            .take_while(|r| r.iteration <= iteration)
            .filter_map(|r| r.scores.get(metric).copied())
            .last()
    }

    pub fn final_value(&self, metric: &str) -> Option<f64> {
        self.iterations.iter().rev().find_map(|r| r.scores.get(metric).copied())
    }
}

fn score(
    case: &BenchmarkCase,
    spec: Option<&Specification>,
    prompt: &str,
    scorer: &dyn Scorer,
) -> BTreeMap<String, f64> {
    let mut scores = BTreeMap::new();
    let truth = case.truth_features();
    if !truth.is_empty() {
        let weights = case.weights();
        let total: f64 = weights.values().sum();
        if let Ok(c) = score_feature_coverage(CoverageTarget::Prompt(prompt), &truth, &TieredMatcher) {
            scores.insert(metric::FEATURE_COVERAGE.to_string(), c);
        }
        if total > 0.0 {
            let w = weighted_coverage(CoverageTarget::Prompt(prompt), &truth, &weights, &TieredMatcher);
            scores.insert(metric::WEIGHTED_COVERAGE.to_string(), w / total);
        }
        if let Some(spec) = spec {
            if let Ok(c) = score_feature_coverage(CoverageTarget::Spec(spec), &truth, &TieredMatcher) {
                scores.insert(metric::SPEC_COVERAGE.to_string(), c);
            }
        }
    }
    if let Ok(s) = scorer.score_text(prompt, &case.reference_text()) {
        scores.insert(metric::TEXT_SIMILARITY.to_string(), s);
    }
    scores
}

/// Run one strategy on one case. `config.seed` is the run seed.
pub fn run_elicitation(
    case: &BenchmarkCase,
    user: &SimulatedUser,
    strategy: Strategy,
    config: &EngineConfig,
    clients: Clients,
    run: u32,
) -> Result<RunTrace, SimulationError> {
    case.validate()?;
    config.budget.validate().map_err(SimulationError::InvalidConfig)?;
    let scorer = HashCosineScorer::default();
    let mut trace = RunTrace {
        case_id: case.case_id.clone(),
        category: case.category.clone(),
        strategy,
        run,
        run_seed: config.seed,
        iterations: Vec::new(),
        engine_journal: Vec::new(),
        user_journal: Vec::new(),
    };

    match strategy.selection() {
        None => {
            let (prompt, error) = if strategy == Strategy::Apo {
                let payload = json!({
                    "mode": "rewrite",
                    "initial_prompt": case.initial_prompt,
                    "meta_prompt": config.synthesis.meta_prompt,
                    "model_context": config.synthesis.model_context,
                });
                match clients.call(OracleKind::Synthesize, payload) {
                    Ok(OracleReply::Synthesize(p)) => (p, None),
                    Ok(_) => unreachable!("schema parse returns the requested kind"),
                    Err(err) => (case.initial_prompt.clone(), Some(err.to_string())),
                }
            } else {
                (case.initial_prompt.clone(), None)
            };
            let rendered = clients.render(&prompt, config.seed, &config.render, RenderPurpose::Baseline);
            let (image, render_error) = match rendered {
                Ok(h) => (Some(h), None),
                Err(e) => (None, Some(e.to_string())),
            };
            trace.iterations.push(IterationRecord {
                iteration: 1,
                feature: None,
                options: Vec::new(),
                eaug: None,
                answer: None,
                spec_revision: 0,
                specification: None,
                scores: score(case, None, &prompt, &scorer),
                prompt,
                image,
                error: error.or(render_error),
            });
        }
        Some(policy) => {
            let engine_config = EngineConfig {
                selection: policy,
                ..config.clone()
            };
            let mut session = Session::create(
                format!("{}-{}-{}", case.case_id, strategy, run),
                &case.initial_prompt,
                engine_config,
                clients.clone(),
                None,
            )
            .map_err(|e| SimulationError::Session(e.to_string()))?;
            let matcher = TieredMatcher;
            for iteration in 1..=config.budget.max_iterations {
                let Some(active) = session.state().active_query.clone() else {
                    break;
                };
                let mut record = IterationRecord {
                    iteration,
                    feature: Some(active.query.feature.clone()),
                    options: active.query.options.iter().map(|o| o.label.clone()).collect(),
                    eaug: active.eaug,
                    answer: None,
                    spec_revision: session.state().specification.revision(),
                    specification: None,
                    prompt: String::new(),
                    image: None,
                    scores: BTreeMap::new(),
                    error: None,
                };
                let step = simulate_answer(user, &active.query, &matcher).and_then(|answer| {
                    record.answer = Some(answer.clone());
                    session
                        .answer(answer)
                        .map_err(|e| SimulationError::Session(e.to_string()))?;
                    session.generate().map_err(|e| SimulationError::Session(e.to_string()))
                });
                let state = session.state();
                record.error = step.err().map(|e| e.to_string()).or_else(|| state.last_error.clone());
                record.spec_revision = state.specification.revision();
                record.specification = Some(state.specification.clone());
                if let Some(generation) = state.generations.last() {
                    record.prompt = generation.prompt.text.clone();
                    record.image = generation.image.clone();
                    if record.error.is_none() {
                        record.error = generation.render_error.clone();
                    }
                }
                if !record.prompt.is_empty() {
                    record.scores = score(case, Some(&state.specification), &record.prompt, &scorer);
                }
                trace.iterations.push(record);
            }
        }
    }
    trace.engine_journal = clients.journal().entries();
    if let Some(c) = user.clients() {
        trace.user_journal = c.journal().entries();
    }
    Ok(trace)
}

/// Where a benchmark run gets its backends.
pub trait BackendProvider: Send + Sync {
    fn engine(&self, case: &BenchmarkCase, world_seed: u64) -> (Arc<dyn LanguageBackend>, Arc<dyn RenderBackend>);
    /// Oracle used by LLM-backed simulated users.
    fn simulator(&self, case: &BenchmarkCase, world_seed: u64) -> Arc<dyn LanguageBackend>;
    fn retry(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

/// Scripted backends: one [`SyntheticWorld`] per (case, run).
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    pub world: WorldOptions,
}

impl BackendProvider for ScriptedProvider {
    fn engine(&self, case: &BenchmarkCase, world_seed: u64) -> (Arc<dyn LanguageBackend>, Arc<dyn RenderBackend>) {
        let world = SyntheticWorld::with_options(case, world_seed, &self.world);
        (
            Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(world))),
            Arc::new(ScriptedRenderer::default()),
        )
    }

    fn simulator(&self, case: &BenchmarkCase, world_seed: u64) -> Arc<dyn LanguageBackend> {
        self.engine(case, world_seed).0
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy::immediate()
    }
}

/// The same backends for every run (live services).
#[derive(Clone)]
pub struct SharedProvider {
    pub language: Arc<dyn LanguageBackend>,
    pub renderer: Arc<dyn RenderBackend>,
    pub simulator: Arc<dyn LanguageBackend>,
    pub retry: RetryPolicy,
}

impl BackendProvider for SharedProvider {
    fn engine(&self, _: &BenchmarkCase, _: u64) -> (Arc<dyn LanguageBackend>, Arc<dyn RenderBackend>) {
        (self.language.clone(), self.renderer.clone())
    }

    fn simulator(&self, _: &BenchmarkCase, _: u64) -> Arc<dyn LanguageBackend> {
        self.simulator.clone()
    }

    fn retry(&self) -> RetryPolicy {
        self.retry.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub engine: EngineConfig,
    pub runs_per_case: u32,
    pub seed: u64,
    pub parallelism: usize,
    /// Simulator kind for every case; `None` picks by ground-truth variant.
    pub user: Option<UserKind>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            runs_per_case: 5,
            seed: 0,
            parallelism: 1,
            user: None,
        }
    }
}

pub fn run_seed(seed: u64, case_id: &str, strategy: Strategy, run: u32) -> u64 {
    derive_seed(&[&seed.to_string(), case_id, strategy.as_str(), &run.to_string()])
}

/// World seed shared by every strategy of the same (case, run).
pub fn world_seed(seed: u64, case_id: &str, run: u32) -> u64 {
    derive_seed(&[&seed.to_string(), case_id, "world", &run.to_string()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub case_id: String,
    pub strategy: Strategy,
    pub run: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: Strategy,
    pub metric: String,
    pub iteration: u32,
    pub mean: f64,
    pub ci_half_width: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub category: String,
    pub strategy: Strategy,
    pub metric: String,
    pub mean: f64,
    pub ci_half_width: Option<f64>,
    pub completed: usize,
    pub attempted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub traces: Vec<RunTrace>,
    pub failures: Vec<RunFailure>,
    pub curves: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
}

/// Mean and 95% t-interval half width (`None` with fewer than two values).
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

fn run_job(
    case: &BenchmarkCase,
    strategy: Strategy,
    run: u32,
    config: &BenchmarkConfig,
    provider: &dyn BackendProvider,
) -> Result<RunTrace, SimulationError> {
    let wseed = world_seed(config.seed, &case.case_id, run);
    let (language, renderer) = provider.engine(case, wseed);
    let clients = Clients::new(language, renderer.clone()).with_retry(provider.retry());
    let kind = config.user.unwrap_or_else(|| UserKind::for_case(case));
    let user = match kind {
        UserKind::Scripted => SimulatedUser::scripted(case)?,
        kind => {
            let sim = Clients::new(provider.simulator(case, wseed), renderer).with_retry(provider.retry());
            SimulatedUser::llm_backed(kind, case, sim)?
        }
    };
    let engine = EngineConfig {
        seed: run_seed(config.seed, &case.case_id, strategy, run),
        ..config.engine.clone()
    };
    run_elicitation(case, &user, strategy, &engine, clients, run)
}

/// Every (case, strategy, run) combination, aggregated into curves and a summary.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
    strategies: &[Strategy],
    config: &BenchmarkConfig,
    provider: &dyn BackendProvider,
) -> Result<BenchmarkResult, SimulationError> {
    if config.runs_per_case == 0 {
        return Err(SimulationError::InvalidConfig(
            "runs_per_case must be at least 1".into(),
        ));
    }
    if strategies.is_empty() {
        return Err(SimulationError::InvalidConfig("no strategies given".into()));
    }
    config
        .engine
        .budget
        .validate()
        .map_err(SimulationError::InvalidConfig)?;
    for case in cases {
        case.validate()?;
    }
    let jobs: Vec<(&BenchmarkCase, Strategy, u32)> = cases
        .iter()
        .flat_map(|c| {
            strategies
                .iter()
                .flat_map(move |s| (0..config.runs_per_case).map(move |r| (c, *s, r)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<Result<RunTrace, SimulationError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(case, strategy, run)| run_job(case, *strategy, *run, config, provider))
            .collect()
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for ((case, strategy, run), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(trace) => traces.push(trace),
            Err(err) => failures.push(RunFailure {
                case_id: case.case_id.clone(),
                strategy: *strategy,
                run: *run,
                error: err.to_string(),
            }),
        }
    }
    let max_iterations = config.engine.budget.max_iterations;
    let curves = curves(&traces, strategies, max_iterations);
    let summary = summarize(&traces, &failures, strategies, cases);
    Ok(BenchmarkResult {
        traces,
        failures,
        curves,
        summary,
    })
}

fn metric_names(traces: &[RunTrace]) -> Vec<String> {
    let mut names: Vec<String> = traces
        .iter()
        .flat_map(|t| t.iterations.iter().flat_map(|r| r.scores.keys().cloned()))
        .collect();
    names.sort();
    names.dedup();
    names
}

/// Per-iteration mean curves; traces shorter than the budget carry their last value.
pub fn curves(traces: &[RunTrace], strategies: &[Strategy], max_iterations: u32) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    for strategy in strategies {
        let mine: Vec<&RunTrace> = traces.iter().filter(|t| t.strategy == *strategy).collect();
        for metric in metric_names(traces) {
            for iteration in 1..=max_iterations {
                let values: Vec<f64> = mine.iter().filter_map(|t| t.value_at(&metric, iteration)).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, ci) = mean_ci(&values);
                points.push(CurvePoint {
                    strategy: *strategy,
                    metric: metric.clone(),
                    iteration,
                    mean,
                    ci_half_width: ci,
                    n: values.len(),
                });
            }
        }
    }
    points
}

fn summarize(
    traces: &[RunTrace],
    failures: &[RunFailure],
    strategies: &[Strategy],
    cases: &[BenchmarkCase],
) -> Vec<SummaryRow> {
    let mut categories: Vec<String> = cases.iter().map(|c| c.category.clone()).collect();
    categories.sort();
    categories.dedup();
    let mut groups = vec!["all".to_string()];
    groups.extend(categories.into_iter().filter(|c| c != "all"));
    let category_of: BTreeMap<&str, &str> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.category.as_str()))
        .collect();

    let mut rows = Vec::new();
    for group in &groups {
        let in_group = |case_id: &str| group == "all" || category_of.get(case_id).copied() == Some(group.as_str());
        for strategy in strategies {
            let mine: Vec<&RunTrace> = traces
                .iter()
                .filter(|t| t.strategy == *strategy && in_group(&t.case_id))
                .collect();
            let failed = failures
                .iter()
                .filter(|f| f.strategy == *strategy && in_group(&f.case_id))
                .count();
            for metric in metric_names(traces) {
                let values: Vec<f64> = mine.iter().filter_map(|t| t.final_value(&metric)).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, ci) = mean_ci(&values);
                rows.push(SummaryRow {
                    category: group.clone(),
                    strategy: *strategy,
                    metric,
                    mean,
                    ci_half_width: ci,
                    completed: values.len(),
                    attempted: mine.len() + failed,
                });
            }
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchmarkResult {
    /// Write `results.csv`, `curves.csv`, `summary.csv`, `traces.jsonl` and
    /// `failures.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SimulationError> {
        let io = |e: &dyn std::fmt::Display, p: &Path| SimulationError::Io(format!("{}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(&e, dir))?;

        let path = dir.join("results.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&e, &path))?;
        w.write_record(["case_id", "category", "strategy", "run", "iteration", "metric", "value"])
            .map_err(|e| io(&e, &path))?;
        for t in &self.traces {
            for r in &t.iterations {
                for (metric, value) in &r.scores {
                    w.write_record([
                        t.case_id.as_str(),
                        t.category.as_str(),
                        t.strategy.as_str(),
                        &t.run.to_string(),
                        &r.iteration.to_string(),
                        metric,
                        &value.to_string(),
                    ])
                    .map_err(|e| io(&e, &path))?;
                }
            }
        }
        w.flush().map_err(|e| io(&e, &path))?;

        let path = dir.join("curves.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&e, &path))?;
        w.write_record(["strategy", "metric", "iteration", "mean", "ci95_half_width", "n"])
            .map_err(|e| io(&e, &path))?;
        for p in &self.curves {
            w.write_record([
                p.strategy.as_str(),
                &p.metric,
                &p.iteration.to_string(),
                &p.mean.to_string(),
                &fmt_opt(p.ci_half_width),
                &p.n.to_string(),
            ])
            .map_err(|e| io(&e, &path))?;
        }
        w.flush().map_err(|e| io(&e, &path))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&e, &path))?;
        w.write_record([
            "category",
            "strategy",
            "metric",
            "mean",
            "ci95_half_width",
            "completed",
            "attempted",
        ])
        .map_err(|e| io(&e, &path))?;
        for s in &self.summary {
            w.write_record([
                s.category.as_str(),
                s.strategy.as_str(),
                &s.metric,
                &s.mean.to_string(),
                &fmt_opt(s.ci_half_width),
                &s.completed.to_string(),
                &s.attempted.to_string(),
            ])
            .map_err(|e| io(&e, &path))?;
        }
        w.flush().map_err(|e| io(&e, &path))?;

        let path = dir.join("traces.jsonl");
        let mut lines = String::new();
        for t in &self.traces {
            lines.push_str(&serde_json::to_string(t).expect("traces serialize"));
            lines.push('\n');
        }
        std::fs::write(&path, lines).map_err(|e| io(&e, &path))?;

        let path = dir.join("failures.json");
        std::fs::write(
            &path,
            serde_json::to_vec_pretty(&self.failures).expect("failures serialize"),
        )
        .map_err(|e| io(&e, &path))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::case::generate_cases;

    fn quick() -> BenchmarkConfig {
        BenchmarkConfig {
            runs_per_case: 3,
            seed: 1,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn cardinality_is_cases_times_strategies_times_runs() {
        let cases = generate_cases(2, 4, 2..=4);
        let result = run_benchmark(
            &cases,
            &[Strategy::Ape, Strategy::InContext],
            &quick(),
            &ScriptedProvider::default(),
        )
        .unwrap();
        assert_eq!(result.traces.len(), 12);
        assert!(result.failures.is_empty());
    }

    #[test]
    fn unoptimized_renders_the_initial_prompt_once() {
        let case = &generate_cases(1, 4, 3..=3)[0];
        let result = run_benchmark(
            std::slice::from_ref(case),
            &[Strategy::Unoptimized, Strategy::Apo],
            &quick(),
            &ScriptedProvider::default(),
        )
        .unwrap();
        for t in &result.traces {
            assert_eq!(t.iterations.len(), 1);
            match t.strategy {
                Strategy::Unoptimized => assert_eq!(t.iterations[0].prompt, case.initial_prompt),
                _ => assert_ne!(t.iterations[0].prompt, case.initial_prompt),
            }
        }
    }

    #[test]
    fn ape_covers_a_three_feature_intent_in_three_iterations() {
        let case = &generate_cases(1, 12, 3..=3)[0];
        let result = run_benchmark(
            std::slice::from_ref(case),
            &[Strategy::Ape],
            &quick(),
            &ScriptedProvider::default(),
        )
        .unwrap();
        for t in &result.traces {
            assert_eq!(t.value_at(metric::SPEC_COVERAGE, 3), Some(1.0), "{:#?}", t.iterations);
        }
    }

    #[test]
    fn same_seed_same_results() {
        let cases = generate_cases(2, 4, 2..=5);
        let strategies = Strategy::PROTOCOL;
        let a = run_benchmark(&cases, &strategies, &quick(), &ScriptedProvider::default()).unwrap();
        let parallel = BenchmarkConfig {
            parallelism: 4,
            ..quick()
        };
        let b = run_benchmark(&cases, &strategies, &parallel, &ScriptedProvider::default()).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.curves, b.curves);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn traces_never_exceed_the_budget() {
        let cases = generate_cases(3, 8, 6..=8);
        let mut config = quick();
        config.engine.budget.max_iterations = 4;
        config.engine.budget.max_options = 3;
        config.engine.budget.max_candidates = 2;
        let result = run_benchmark(
            &cases,
            &[Strategy::Ape, Strategy::Random],
            &config,
            &ScriptedProvider::default(),
        )
        .unwrap();
        for t in &result.traces {
            assert!(t.iterations.len() <= 4);
            for (i, r) in t.iterations.iter().enumerate() {
                assert_eq!(r.iteration as usize, i + 1);
                assert!(r.options.len() <= 3);
            }
        }
    }

    #[test]
    fn t_interval_matches_reference_quantile() {
        // t(0.975, 4) = 2.7764451051977987
        let (mean, half) = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(mean, 3.0);
        let expected = 2.776_445_105_197_798_7 * (2.5f64 / 5.0).sqrt();
        assert!((half.unwrap() - expected).abs() < 1e-9);
        assert_eq!(mean_ci(&[0.4]).1, None);
    }
}
