//! Mapping free-text values onto presented options.

use crate::text::{contains_tokens, normalize_label, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    Option(usize),
    Residual,
    Unmatched,
}

pub trait OptionMatcher: Send + Sync {
    fn classify(&self, value: &str, options: &[&str], has_residual: bool) -> MatchOutcome;

    /// Whether two values should be considered the same answer.
    fn same_value(&self, a: &str, b: &str) -> bool {
        matches!(self.classify(a, &[b], false), MatchOutcome::Option(0))
    }
}

/// Exact normalized match, then token-phrase containment in either direction,
/// then the residual bucket.
///
/// Among containment matches the option with the most tokens wins; ties go to
/// the lower index.
#[derive(Debug, Clone, Copy, Default)]
pub struct TieredMatcher;

impl OptionMatcher for TieredMatcher {
    fn classify(&self, value: &str, options: &[&str], has_residual: bool) -> MatchOutcome {
        let norm = normalize_label(value);
        if let Some(i) = options.iter().position(|o| normalize_label(o) == norm) {
            return MatchOutcome::Option(i);
        }
        let value_tokens = tokens(value);
        let mut best: Option<(usize, usize)> = None;
        for (i, option) in options.iter().enumerate() {
            let option_tokens = tokens(option);
            if contains_tokens(&value_tokens, &option_tokens) || contains_tokens(&option_tokens, &value_tokens) {
                let len = option_tokens.len();
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((i, len));
                }
            }
        }
        match best {
            Some((i, _)) => MatchOutcome::Option(i),
            None if has_residual => MatchOutcome::Residual,
            None => MatchOutcome::Unmatched,
        }
    }
}
