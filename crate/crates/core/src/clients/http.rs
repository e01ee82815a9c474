//! HTTP backends speaking JSON over a chat-completions style API.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChatRequest, ClientError, CrossScorer, Embedder, EntailmentJudge, LanguageModel, RateLimiter,
};

pub const LLM_API_KEY_ENV: &str = "SUNAR_LLM_API_KEY";
pub const NLI_API_KEY_ENV: &str = "SUNAR_NLI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: usize,
    /// Delay before the first retry; doubled for each later one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub limiter: Option<Arc<RateLimiter>>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            limiter: None,
        }
    }

    pub fn with_api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Minimal JSON POST transport with retries and rate limiting.
#[derive(Debug, Clone)]
struct Transport {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

const BODY_EXCERPT: usize = 300;

impl Transport {
    fn new(cfg: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self { cfg, agent }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        let url = self.cfg.url(path);
        let mut attempt = 0usize;
        loop {
            attempt += 1;
            if let Some(l) = &self.cfg.limiter {
                l.acquire();
            }
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(k) = &self.cfg.api_key {
                req = req.header("Authorization", format!("Bearer {k}"));
            }
            let err = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| ClientError::Protocol(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text)
                            .map_err(|e| ClientError::Protocol(format!("invalid JSON: {e}")));
                    }
                    let err = ClientError::Http {
                        status,
                        body: text.chars().take(BODY_EXCERPT).collect(),
                    };
                    // Only throttling and server faults are worth retrying.
                    if status != 429 && status < 500 {
                        return Err(err);
                    }
                    err
                }
                Err(e) => ClientError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.cfg.retry.retries {
                return Err(match err {
                    ClientError::Transport { message, .. } => ClientError::Transport {
                        attempts: attempt,
                        message,
                    },
                    other => other,
                });
            }
            let delay = self.cfg.retry.base_delay * (1u32 << (attempt - 1));
            log::warn!("request to {url} failed ({err}); retry {attempt} in {delay:?}");
            std::thread::sleep(delay);
        }
    }
}

/// Client for `POST {base}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    transport: Transport,
    /// Penalties forwarded when the request leaves them unset.
    pub default_frequency_penalty: Option<f64>,
    pub default_presence_penalty: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(cfg: HttpConfig) -> Self {
        Self {
            transport: Transport::new(cfg),
            default_frequency_penalty: None,
            default_presence_penalty: None,
        }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.transport.cfg.model,
            "messages": request.messages,
            "n": request.n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        if let Some(p) = request.frequency_penalty.or(self.default_frequency_penalty) {
            body["frequency_penalty"] = json!(p);
        }
        if let Some(p) = request.presence_penalty.or(self.default_presence_penalty) {
            body["presence_penalty"] = json!(p);
        }
        body
    }
}

impl LanguageModel for HttpChatClient {
    fn generate(&self, request: &ChatRequest) -> Result<Vec<String>, ClientError> {
        request.validate()?;
        let raw = self.transport.post("/v1/chat/completions", &self.body(request))?;
        let mut resp: ChatResponse =
            serde_json::from_value(raw).map_err(|e| ClientError::Protocol(e.to_string()))?;
        resp.choices.sort_by_key(|c| c.index.unwrap_or(0));
        let out: Vec<String> = resp
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        if out.len() != request.n {
            return Err(ClientError::Count {
                expected: request.n,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum NliBackend {
    /// Ask a chat model a yes/no entailment question.
    ChatJudge(HttpChatClient),
    /// `POST {base}/v1/entailment` returning `{"entailment": p}`.
    Endpoint(Transport),
}

/// Entailment judge over HTTP.
#[derive(Debug, Clone)]
pub struct HttpNli {
    backend: NliBackend,
}

pub const ENTAILMENT_THRESHOLD: f64 = 0.5;

/// Probabilistic verdicts pass at or above one half.
pub fn threshold_entailment(p: f64) -> bool {
    p >= ENTAILMENT_THRESHOLD
}

pub fn judge_prompt(premise: &str, hypothesis: &str) -> String {
    format!("Does A entail B? Answer yes/no.\nA: {premise}\nB: {hypothesis}")
}

impl HttpNli {
    pub fn chat_judge(cfg: HttpConfig) -> Self {
        Self {
            backend: NliBackend::ChatJudge(HttpChatClient::new(cfg)),
        }
    }

    pub fn endpoint(cfg: HttpConfig) -> Self {
        Self {
            backend: NliBackend::Endpoint(Transport::new(cfg)),
        }
    }
}

impl EntailmentJudge for HttpNli {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, ClientError> {
        match &self.backend {
            NliBackend::ChatJudge(chat) => {
                let mut req = ChatRequest::user(judge_prompt(premise, hypothesis));
                req.max_tokens = 3;
                let out = chat.generate(&req)?;
                let answer = out[0].trim().to_ascii_lowercase();
                Ok(answer.starts_with("yes"))
            }
            NliBackend::Endpoint(t) => {
                let raw = t.post(
                    "/v1/entailment",
                    &json!({"model": t.cfg.model, "premise": premise, "hypothesis": hypothesis}),
                )?;
                let p = raw
                    .get("entailment")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| ClientError::Protocol("missing \"entailment\" probability".into()))?;
                Ok(threshold_entailment(p))
            }
        }
    }
}

/// Cross-scorer over `POST {base}/v1/score` returning `{"score": logit}`.
#[derive(Debug, Clone)]
pub struct HttpCrossScorer {
    transport: Transport,
}

impl HttpCrossScorer {
    pub fn new(cfg: HttpConfig) -> Self {
        Self {
            transport: Transport::new(cfg),
        }
    }
}

impl CrossScorer for HttpCrossScorer {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        let raw = self.transport.post(
            "/v1/score",
            &json!({"model": self.transport.cfg.model, "query": query, "text": doc_text}),
        )?;
        let s = raw
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ClientError::Protocol("missing \"score\"".into()))?;
        if !s.is_finite() {
            return Err(ClientError::NonFinite);
        }
        Ok(s)
    }
}

/// Embedder over `POST {base}/v1/embeddings`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    transport: Transport,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig, dim: usize) -> Self {
        Self {
            transport: Transport::new(cfg),
            dim,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let raw = self.transport.post(
            "/v1/embeddings",
            &json!({"model": self.transport.cfg.model, "input": text}),
        )?;
        let resp: EmbeddingResponse =
            serde_json::from_value(raw).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let v = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Protocol("empty embedding response".into()))?
            .embedding;
        if v.len() != self.dim {
            return Err(ClientError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert!(threshold_entailment(0.51));
        assert!(threshold_entailment(0.5));
        assert!(!threshold_entailment(0.49));
    }

    #[test]
    fn chat_body_carries_protocol_fields() {
        let mut c = HttpChatClient::new(HttpConfig::new("http://x", "gpt-test"));
        c.default_frequency_penalty = Some(0.8);
        c.default_presence_penalty = Some(0.6);
        let req = ChatRequest::user("hi").with_samples(3, 0.7).with_stop("Intermediate Answer:");
        let body = c.body(&req);
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["n"], 3);
        assert_eq!(body["max_tokens"], 1000);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["frequency_penalty"], 0.8);
        assert_eq!(body["presence_penalty"], 0.6);
        assert_eq!(body["stop"][0], "Intermediate Answer:");
    }
}
