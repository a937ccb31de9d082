use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

/// Rules for turning raw text into vocabulary lookups.
///
/// The default lowercases, splits on Unicode whitespace and trims leading
/// and trailing characters from the Unicode punctuation categories. Tokens
/// that are empty after trimming are dropped. No stemming is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .filter_map(|raw| {
                let trimmed = if self.strip_punctuation {
                    raw.trim_matches(is_punctuation)
                } else {
                    raw
                };
                if trimmed.is_empty() {
                    return None;
                }
                Some(if self.lowercase {
                    trimmed.to_lowercase()
                } else {
                    trimmed.to_string()
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_strips_edges() {
        let tok = TokenizerConfig::default();
        assert_eq!(tok.tokenize("A b!"), vec!["a", "b"]);
        assert_eq!(tok.tokenize("  «Hello», world… "), vec!["hello", "world"]);
    }

    #[test]
    fn keeps_inner_punctuation() {
        let tok = TokenizerConfig::default();
        assert_eq!(tok.tokenize("don't (re-run)"), vec!["don't", "re-run"]);
    }

    #[test]
    fn drops_pure_punctuation() {
        let tok = TokenizerConfig::default();
        assert!(tok.tokenize("!!! -- ...").is_empty());
    }

    #[test]
    fn unicode_whitespace_splits() {
        let tok = TokenizerConfig::default();
        assert_eq!(tok.tokenize("a\u{00a0}b\u{2003}c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn raw_mode_is_plain_split() {
        let tok = TokenizerConfig {
            lowercase: false,
            strip_punctuation: false,
        };
        assert_eq!(tok.tokenize("A b!"), vec!["A", "b!"]);
    }
}
