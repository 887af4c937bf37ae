//! Simulated-user benchmark harness: cases, simulated users, baseline
//! strategies and per-iteration traces.

mod case;
mod runner;
mod user;
mod world;

pub use case::{generate_cases, load_cases, BenchmarkCase, GroundTruth};
pub use runner::{
    curves, mean_ci, metric, run_benchmark, run_elicitation, run_seed, world_seed, BackendProvider, BenchmarkConfig,
    BenchmarkResult, CurvePoint, IterationRecord, RunFailure, RunTrace, ScriptedProvider, SharedProvider, Strategy,
    SummaryRow,
};
pub use user::{simulate_answer, SimulatedUser, UserKind, MAX_OTHER_CHARS};
pub use world::{SyntheticWorld, WorldOptions, CATALOG, DETAIL_SUFFIX, REASONING_MARKER, REWRITE_SUFFIX};

use crate::oracle::OracleError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("case `{case_id}`: {message}")]
    InvalidCase { case_id: String, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid simulated answer: {0}")]
    InvalidAnswer(String),
    #[error("session: {0}")]
    Session(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
