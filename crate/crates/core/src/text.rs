//! Label and value normalization plus token-level containment.

/// Lowercase, trim and collapse internal whitespace.
///
/// Used for feature labels and for every value comparison. Idempotent.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Trim and collapse whitespace but keep the original casing.
pub fn clean_value(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric tokens. Punctuation is a separator.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True when the token sequence of `needle` occurs contiguously inside `haystack`.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let hay = tokens(haystack);
    let pin = tokens(needle);
    contains_tokens(&hay, &pin)
}

pub(crate) fn contains_tokens(hay: &[String], pin: &[String]) -> bool {
    if pin.is_empty() || pin.len() > hay.len() {
        return false;
    }
    hay.windows(pin.len()).any(|w| w == pin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_case_and_whitespace() {
        assert_eq!(normalize_label("  Artistic   Style \t"), "artistic style");
        assert_eq!(clean_value("  Dark  Blue "), "Dark Blue");
    }

    #[test]
    fn phrase_containment_is_token_aligned() {
        assert!(contains_phrase("a dark blue app icon", "dark blue"));
        assert!(!contains_phrase("tired hiker", "red"));
        assert!(!contains_phrase("blue", "dark blue"));
        assert!(contains_phrase("Mountain, flat minimalist style", "flat minimalist"));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once);
        }
    }
}
