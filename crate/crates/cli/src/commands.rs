use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use elicit_core::oracle::{Clients, RetryPolicy, ScriptedBackend, ScriptedRenderer};
use elicit_core::session::{replay_dir, RequirementEdit, Session, SessionStore};
use elicit_core::simulation::{
    generate_cases, load_cases, run_benchmark, simulate_answer, BenchmarkCase, BenchmarkConfig, SimulatedUser,
    Strategy, SyntheticWorld,
};
use elicit_core::{EngineConfig, TieredMatcher};
use serde::{Deserialize, Serialize};

use crate::backends::bench_provider;
use crate::settings::BackendSettings;

pub const CONFIG_FILE: &str = "config.json";

/// Everything a benchmark run depends on; written to the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub cases: Vec<PathBuf>,
    /// Synthetic cases generated from `seed` in addition to `cases`.
    pub synthetic: usize,
    pub strategies: Vec<Strategy>,
    pub runs_per_case: u32,
    pub engine: EngineConfig,
    pub backend: BackendSettings,
    pub seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.cases.is_empty() && self.synthetic == 0 {
            bail!("no cases: pass --cases or --synthetic");
        }
        if self.strategies.is_empty() {
            bail!("no strategies given");
        }
        if self.runs_per_case == 0 {
            bail!("--runs must be at least 1");
        }
        if self.parallelism == 0 {
            bail!("--parallel must be at least 1");
        }
        self.engine.budget.validate().map_err(anyhow::Error::msg)
    }

    pub fn load_cases(&self) -> anyhow::Result<Vec<BenchmarkCase>> {
        let mut cases = Vec::new();
        for path in &self.cases {
            if !path.exists() {
                bail!("case file not found: {}", path.display());
            }
            cases.extend(load_cases(path).with_context(|| format!("loading cases from {}", path.display()))?);
        }
        cases.extend(generate_cases(self.synthetic, self.seed, 2..=8));
        Ok(cases)
    }
}

/// Outcome of a benchmark command, for callers that need more than the exit code.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub traces: usize,
    pub failures: usize,
}

pub fn cmd_bench(config: &RunConfig) -> anyhow::Result<BenchOutcome> {
    config.validate()?;
    let cases = config.load_cases()?;
    std::fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let config_path = config.out.join(CONFIG_FILE);
    std::fs::write(&config_path, serde_json::to_string_pretty(config)? + "\n")
        .with_context(|| format!("writing {}", config_path.display()))?;

    let provider = bench_provider(&config.backend)?;
    let bench = BenchmarkConfig {
        engine: EngineConfig {
            seed: config.seed,
            ..config.engine.clone()
        },
        runs_per_case: config.runs_per_case,
        seed: config.seed,
        parallelism: config.parallelism,
        user: None,
    };
    let result = run_benchmark(&cases, &config.strategies, &bench, provider.as_ref())?;
    result.write(&config.out)?;
    for failure in &result.failures {
        tracing::error!(case = %failure.case_id, strategy = %failure.strategy, run = failure.run, "{}", failure.error);
    }
    Ok(BenchOutcome {
        traces: result.traces.len(),
        failures: result.failures.len(),
    })
}

/// Exit status of `replay`: 0 match, 1 mismatch or corrupt session, 2 usage error.
pub fn cmd_replay(dir: &Path, out: &mut dyn std::io::Write) -> i32 {
    let is_empty = std::fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(true);
    if !dir.is_dir() || is_empty {
        let _ = writeln!(out, "usage error: {} is not a session directory", dir.display());
        return 2;
    }
    match replay_dir(dir) {
        Ok(report) if report.is_match() => {
            let _ = writeln!(out, "ok: {} events replayed identically", report.events);
            0
        }
        Ok(report) => {
            let _ = writeln!(out, "mismatch after replaying {} events", report.events);
            for line in report.divergences.iter().chain(&report.diffs) {
                let _ = writeln!(out, "  {line}");
            }
            1
        }
        Err(err) => {
            let _ = writeln!(out, "replay failed: {err}");
            1
        }
    }
}

/// Record a persisted session driven by a scripted user over the synthetic world.
///
/// Up to `answers` queries are answered, each followed by a generation; after
/// the second answer one requirement is edited.
pub fn record_scripted_session(
    dir: &Path,
    case: &BenchmarkCase,
    config: &EngineConfig,
    answers: usize,
) -> anyhow::Result<()> {
    let store = SessionStore::create(dir)?;
    let world = SyntheticWorld::new(case, config.seed);
    let clients = Clients::new(
        Arc::new(ScriptedBackend::new(false).with_responder(Arc::new(world))),
        Arc::new(ScriptedRenderer::default()),
    )
    .with_retry(RetryPolicy::immediate())
    .with_journal(store.journal()?)
    .with_media(store.media()?);
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| case.case_id.clone());
    let mut session = Session::create(id, &case.initial_prompt, config.clone(), clients, Some(store))?;
    let user = SimulatedUser::scripted(case)?;
    for step in 0..answers {
        let Some(active) = session.state().active_query.clone() else {
            break;
        };
        let answer = simulate_answer(&user, &active.query, &TieredMatcher)?;
        session.answer(answer)?;
        if step == 1 {
            if let Some(req) = session.state().specification.requirements().last().cloned() {
                session.edit(&[RequirementEdit::Modify {
                    feature: req.feature,
                    value: format!("{} (edited)", req.value),
                }])?;
            }
        }
        session.generate()?;
    }
    session.close()?;
    Ok(())
}

pub fn cmd_record(
    out: &Path,
    sessions: usize,
    seed: u64,
    answers: usize,
    engine: &EngineConfig,
) -> anyhow::Result<Vec<PathBuf>> {
    let cases = generate_cases(sessions, seed, 2..=6);
    let mut dirs = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let dir = out.join(format!("session-{:03}", i + 1));
        let config = EngineConfig {
            seed: seed.wrapping_add(i as u64),
            ..engine.clone()
        };
        record_scripted_session(&dir, case, &config, answers)
            .with_context(|| format!("recording {}", dir.display()))?;
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn cmd_gen_cases(out: &Path, n: usize, seed: u64, min_features: usize, max_features: usize) -> anyhow::Result<()> {
    if min_features == 0 || min_features > max_features {
        bail!("feature range {min_features}..={max_features} is empty");
    }
    let cases = generate_cases(n, seed, min_features..=max_features);
    let text = serde_json::to_string_pretty(&cases)? + "\n";
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
