//! Deterministic fixture backend for tests and offline runs.
//!
//! Fixture entries match on substrings of the rendered prompt; the first
//! entry whose substrings all appear wins. Prompts with no matching entry
//! are a distinct error so pipelines can tell a fixture gap from a network
//! failure. Token counts are approximated as ceil(chars / 4).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::prompt::approx_tokens;

use super::{BackendResponse, CompletionBackend, GenerationParams, LlmError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    /// All substrings must appear in the prompt for the rule to match.
    pub contains: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self { rules }
    }

    /// Loads a JSONL fixture: one `{"contains": [...], "response": "..."}`
    /// object per line.
    pub fn from_fixture(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut rules = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(line).map_err(|e| LlmError::Fixture {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    /// Convenience for tests: each pair is (required substring, response).
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self {
            rules: pairs
                .iter()
                .map(|(needle, response)| MockRule {
                    contains: vec![needle.to_string()],
                    response: response.to_string(),
                })
                .collect(),
        }
    }
}

impl CompletionBackend for MockBackend {
    fn id(&self) -> &'static str {
        "mock"
    }

    fn complete(
        &self,
        prompt: &str,
        _params: &GenerationParams,
    ) -> Result<BackendResponse, LlmError> {
        for rule in &self.rules {
            if rule.contains.iter().all(|needle| prompt.contains(needle)) {
                return Ok(BackendResponse {
                    text: rule.response.clone(),
                    input_tokens: approx_tokens(prompt) as u64,
                    output_tokens: approx_tokens(&rule.response) as u64,
                });
            }
        }
        Err(LlmError::MockMiss {
            preview: prompt
                .lines()
                .last()
                .unwrap_or("")
                .chars()
                .take(120)
                .collect(),
        })
    }
}

/// Cache-only backend: every call that reaches it is a replay miss. Used
/// for byte-reproducible re-runs where the network is forbidden.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend;

impl CompletionBackend for ReplayBackend {
    fn id(&self) -> &'static str {
        "replay"
    }

    fn complete(
        &self,
        prompt: &str,
        _params: &GenerationParams,
    ) -> Result<BackendResponse, LlmError> {
        Err(LlmError::ReplayMiss {
            preview: prompt
                .lines()
                .last()
                .unwrap_or("")
                .chars()
                .take(120)
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let backend = MockBackend::new(vec![
            MockRule {
                contains: vec!["alpha".into(), "beta".into()],
                response: "both".into(),
            },
            MockRule {
                contains: vec!["alpha".into()],
                response: "just alpha".into(),
            },
        ]);
        let params = GenerationParams::default();
        assert_eq!(
            backend.complete("alpha beta", &params).unwrap().text,
            "both"
        );
        assert_eq!(
            backend.complete("alpha only", &params).unwrap().text,
            "just alpha"
        );
    }

    #[test]
    fn miss_is_a_distinct_error() {
        let backend = MockBackend::from_pairs(&[("known", "<a, on, b>")]);
        let params = GenerationParams::default();
        assert_eq!(
            backend.complete("the known prompt", &params).unwrap().text,
            "<a, on, b>"
        );
        assert!(matches!(
            backend.complete("something else", &params),
            Err(LlmError::MockMiss { .. })
        ));
    }

    #[test]
    fn token_counts_are_char_quarters() {
        let backend = MockBackend::from_pairs(&[("p", "12345678")]);
        let resp = backend
            .complete("pppp", &GenerationParams::default())
            .unwrap();
        assert_eq!(resp.input_tokens, 1);
        assert_eq!(resp.output_tokens, 2);
    }

    #[test]
    fn replay_always_misses() {
        assert!(matches!(
            ReplayBackend.complete("x", &GenerationParams::default()),
            Err(LlmError::ReplayMiss { .. })
        ));
    }
}
