//! Command-line driver and HTTP front for the elicitation engine.

pub mod backends;
pub mod commands;
pub mod http;
pub mod settings;

pub use commands::{cmd_bench, cmd_gen_cases, cmd_record, cmd_replay, record_scripted_session, RunConfig};
pub use settings::{BackendKind, Settings};
