//! Model client abstractions: chat LLM, entailment judge, cross-scorer and
//! embedder. Each has an HTTP backend and deterministic scripted mocks. No
//! other module performs network IO.

pub mod fingerprint;
pub mod http;
pub mod ratelimit;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fingerprint::{fingerprint_chat, fingerprint_embed, fingerprint_pair, normalize_prompt};
pub use ratelimit::RateLimiter;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no fixture entry for {kind} request with fingerprint {fingerprint}")]
    FixtureMiss { kind: &'static str, fingerprint: String },
    #[error("non-finite score")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("expected {expected} completion(s), got {got}")]
    Count { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("fixture file {path}: {reason}")]
    Fixture { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Stop sequences; completions are cut at the first occurrence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence_penalty: Option<f64>,
}

pub const DEFAULT_MAX_TOKENS: usize = 1000;

impl ChatRequest {
    pub fn user(prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            n: 1,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: Vec::new(),
            frequency_penalty: None,
            presence_penalty: None,
        }
    }

    pub fn with_samples(mut self, n: usize, temperature: f64) -> Self {
        self.n = n;
        self.temperature = temperature;
        self
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop.push(stop.into());
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.n == 0 {
            return Err(ClientError::InvalidRequest("n must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ClientError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.messages.is_empty() {
            return Err(ClientError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }

    /// Concatenated message contents, used by prompt-inspecting mocks.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_chat(&self.messages, self.n)
    }
}

pub trait LanguageModel: Send + Sync {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError>;
}

pub trait EntailmentJudge: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError>;
}

pub trait CrossScorer: Send + Sync {
    /// Raw relevance logit for a (query, document) pair.
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        (**self).generate(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        (**self).generate(request)
    }
}

impl<T: EntailmentJudge + ?Sized> EntailmentJudge for std::sync::Arc<T> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError> {
        (**self).entails(premise, hypothesis)
    }
}

impl<T: CrossScorer + ?Sized> CrossScorer for std::sync::Arc<T> {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        (**self).score(query, doc_text)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        (**self).embed(text)
    }
}

/// Validates the request and enforces the `n` completions contract.
pub fn llm_generate(
    client: &dyn LanguageModel,
    request: &ChatRequest,
) -> Result<Vec<String>, ClientError> {
    request.validate()?;
    let mut out = client.generate(request)?;
    if out.len() != request.n {
        return Err(ClientError::Count {
            expected: request.n,
            got: out.len(),
        });
    }
    for s in &mut out {
        apply_stop(s, &request.stop);
    }
    Ok(out)
}

pub fn entail(
    client: &dyn EntailmentJudge,
    premise: &str,
    hypothesis: &str,
) -> Result<bool, ClientError> {
    client.entails(premise, hypothesis)
}

pub fn cross_score(client: &dyn CrossScorer, query: &str, doc_text: &str) -> Result<f64, ClientError> {
    if query.trim().is_empty() {
        return Err(ClientError::InvalidRequest("empty query".into()));
    }
    let s = client.score(query, doc_text)?;
    if !s.is_finite() {
        return Err(ClientError::NonFinite);
    }
    Ok(s)
}

pub fn embed(client: &dyn Embedder, text: &str, dim: usize) -> Result<Vec<f64>, ClientError> {
    if dim == 0 {
        return Err(ClientError::Config("embedding dim must be >= 1".into()));
    }
    if client.dim() != dim {
        return Err(ClientError::Dimension {
            expected: dim,
            got: client.dim(),
        });
    }
    let v = client.embed(text)?;
    if v.len() != dim {
        return Err(ClientError::Dimension {
            expected: dim,
            got: v.len(),
        });
    }
    Ok(v)
}

/// Truncates `text` at the earliest stop sequence (ASCII case-insensitive).
pub fn apply_stop(text: &mut String, stops: &[String]) {
    let lower = text.to_ascii_lowercase();
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| lower.find(&s.to_ascii_lowercase()))
        .min();
    if let Some(i) = cut {
        text.truncate(i);
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::*;
    use super::*;

    #[test]
    fn count_contract_enforced() {
        let req = ChatRequest::user("Q").with_samples(2, 0.7);
        let mut llm = ScriptedLlm::default();
        llm.insert(&req, vec!["A".into(), "B".into()]);
        assert_eq!(llm_generate(&llm, &req).unwrap(), ["A", "B"]);

        let req5 = ChatRequest::user("Q").with_samples(5, 0.7);
        let five: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        llm.insert(&req5, five.clone());
        assert_eq!(llm_generate(&llm, &req5).unwrap(), five);

        let mut bad = ScriptedLlm::default();
        bad.insert(&req5, vec!["x".into()]);
        assert!(matches!(
            llm_generate(&bad, &req5),
            Err(ClientError::Count { expected: 5, got: 1 })
        ));
    }

    #[test]
    fn fixture_miss_names_fingerprint() {
        let llm = ScriptedLlm::default();
        let req = ChatRequest::user("unknown");
        let err = llm_generate(&llm, &req).unwrap_err();
        assert!(err.to_string().contains(&req.fingerprint()));
    }

    #[test]
    fn zero_samples_rejected() {
        let llm = ScriptedLlm::default();
        let mut req = ChatRequest::user("Q");
        req.n = 0;
        assert!(matches!(llm_generate(&llm, &req), Err(ClientError::InvalidRequest(_))));
    }

    #[test]
    fn stop_sequences_cut_case_insensitively() {
        let mut s = "Follow up: X\nIntermediate answer: Y".to_string();
        apply_stop(&mut s, &["Intermediate Answer:".into()]);
        assert_eq!(s, "Follow up: X\n");
    }

    struct NanScorer;
    impl CrossScorer for NanScorer {
        fn score(&self, _: &str, _: &str) -> Result<f64, ClientError> {
            Ok(f64::NAN)
        }
    }

    #[test]
    fn non_finite_score_rejected() {
        let err = cross_score(&NanScorer, "q", "d").unwrap_err();
        assert_eq!(err.to_string(), "non-finite score");
    }

    #[test]
    fn lexical_overlap_counts_shared_tokens() {
        assert_eq!(cross_score(&LexicalOverlapScorer, "red fox", "red hen").unwrap(), 1.0);
    }

    #[test]
    fn embed_dim_checks() {
        let e = HashEmbedder::new(4);
        assert!(matches!(embed(&e, "x", 0), Err(ClientError::Config(_))));
        assert!(matches!(embed(&e, "x", 3), Err(ClientError::Dimension { .. })));
        assert_eq!(embed(&e, "x", 4).unwrap().len(), 4);
    }

    #[test]
    fn exact_match_nli() {
        assert!(entail(&ExactMatchNli, "Paris", "Paris").unwrap());
        assert!(!entail(&ExactMatchNli, "Paris", "London").unwrap());
    }
}
