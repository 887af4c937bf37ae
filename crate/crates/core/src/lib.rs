//! Adaptive prompt elicitation for text-to-image generation.
//!
//! The engine keeps a partial specification of what the user wants, asks the
//! most informative visual question next, and compiles the answers into a
//! prompt for the image model.

pub mod config;
pub mod intent;
pub mod matcher;
pub mod metrics;
pub mod oracle;
pub mod query;
pub mod session;
pub mod simulation;
pub mod synthesis;
pub mod text;

pub use config::{Budget, EngineConfig, SelectionPolicy};
pub use intent::{FeatureRequirement, FeatureSpace, IntentError, IntentSample, Origin, PersonaConfig, Specification};
pub use matcher::{MatchOutcome, OptionMatcher, TieredMatcher};
pub use oracle::{Clients, ImageHandle, Journal, OracleError, OracleKind, RenderParameters};
pub use query::{Answer, CandidateQuery, QueryError, QueryOption, ScoredQuery};
pub use session::{Session, SessionError, SessionService, SessionState, Status};
pub use synthesis::{SynthesisContext, SynthesizedPrompt};
