//! HTTP adapter for OpenAI-compatible local inference servers.
//!
//! Wire surface:
//!
//! | capability | request |
//! |---|---|
//! | generation | `POST {base_url}/chat/completions` with `model`, `messages`, `n`, `temperature`, `max_tokens` |
//! | embeddings | `POST {base_url}/embeddings` with `model`, `input` |
//! | reward / relevance / NLI | `POST {base_url}/score` with `model`, `text_1`, `text_2`; reads `data[0].score` |
//! | log-probs | `POST {base_url}/completions` with `echo: true`, `logprobs: 0`, `max_tokens: 0` |
//! | health | `GET {base_url}/models` |
//!
//! Transport failures and 5xx answers are retried up to `max_retries` times;
//! 4xx answers fail immediately.

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{
    BackendError, Backends, Embedder, LogProb, LogProbModel, NliModel, RewardModel, ScorerSpec,
    TextGenerator,
};
use crate::alignment::AlignedSegment;
use crate::rewriter::RewritePrompt;
use crate::types::PrivacySpec;

const SYSTEM_PROMPT: &str =
    "You rewrite user text to remove private details while keeping it natural. Answer with the rewritten text only.";

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_temperature() -> f64 {
    0.7
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> f64 {
    0.5
}
fn default_bounds() -> [f64; 2] {
    [0.0, 1.0]
}

/// Connection settings for one model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEndpoint {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Upper bound on in-flight requests to this endpoint.
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_backoff")]
    pub retry_backoff_secs: f64,
    /// Raw score range mapped onto [0,1] for reward scoring.
    #[serde(default = "default_bounds")]
    pub reward_bounds: [f64; 2],
    #[serde(default)]
    pub supports_logprobs: bool,
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            auth_token_env: None,
            temperature: default_temperature(),
            max_concurrency: default_concurrency(),
            retry_backoff_secs: default_backoff(),
            reward_bounds: default_bounds(),
            supports_logprobs: false,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidRequest(m));
        if reqwest::Url::parse(&self.base_url).is_err() {
            return bad(format!("base_url {:?} is not a URL", self.base_url));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be > 0".into());
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be ≥ 1".into());
        }
        if !(self.retry_backoff_secs >= 0.0) {
            return bad("retry_backoff_secs must be ≥ 0".into());
        }
        let [lo, hi] = self.reward_bounds;
        if !(lo < hi) {
            return bad(format!("reward_bounds [{lo}, {hi}] must be increasing"));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: Client,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        endpoint.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                endpoint: endpoint.base_url.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            gate: Gate::new(endpoint.max_concurrency),
            endpoint,
            client,
        })
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn transport(&self, message: String) -> BackendError {
        BackendError::Transport {
            endpoint: self.endpoint.base_url.clone(),
            message,
        }
    }

    fn protocol(&self, message: impl Into<String>) -> BackendError {
        BackendError::Protocol {
            endpoint: self.endpoint.base_url.clone(),
            message: message.into(),
        }
    }

    /// Sends with retries. `body = None` issues a GET.
    fn call(&self, path: &str, body: Option<&Value>) -> Result<Value, BackendError> {
        let url = self.endpoint.url(path);
        let token = self
            .endpoint
            .auth_token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let mut last = None;
        for attempt in 0..=self.endpoint.max_retries {
            if attempt > 0 {
                let wait = self.endpoint.retry_backoff_secs * f64::from(1u32 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
            let mut req = match body {
                Some(b) => self
                    .client
                    .post(&url)
                    .header("content-type", "application/json")
                    .body(serde_json::to_vec(b).expect("json values serialize")),
                None => self.client.get(&url),
            };
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            let outcome = {
                let _permit = self.gate.acquire();
                req.send().and_then(|r| {
                    let status = r.status();
                    r.text().map(|t| (status, t))
                })
            };
            match outcome {
                Err(e) => {
                    log::warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = Some(self.transport(e.to_string()));
                }
                Ok((status, text)) if status.is_success() => {
                    if text.trim().is_empty() {
                        return Ok(Value::Null);
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| self.protocol(format!("{path}: invalid JSON: {e}")));
                }
                Ok((status, text)) => {
                    let err = BackendError::Status {
                        endpoint: url.clone(),
                        status: status.as_u16(),
                        body: text.chars().take(500).collect(),
                    };
                    if status.is_client_error() {
                        return Err(err);
                    }
                    log::warn!("{url}: attempt {} answered {status}", attempt + 1);
                    last = Some(err);
                }
            }
        }
        Err(last.unwrap_or_else(|| self.transport("no attempt made".into())))
    }

    fn score_pair(&self, text_1: &str, text_2: &str) -> Result<f64, BackendError> {
        let resp = self.call(
            "score",
            Some(&json!({
                "model": self.endpoint.model_name,
                "text_1": text_1,
                "text_2": text_2,
            })),
        )?;
        resp.pointer("/data/0/score")
            .and_then(Value::as_f64)
            .ok_or_else(|| self.protocol("score response lacks data[0].score"))
    }

    fn normalize_reward(&self, raw: f64) -> f64 {
        let [lo, hi] = self.endpoint.reward_bounds;
        (raw - lo) / (hi - lo)
    }
}

impl TextGenerator for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.endpoint.model_name, self.endpoint.base_url)
    }

    fn generate(
        &self,
        prompt: &RewritePrompt,
        n: usize,
        max_tokens: usize,
    ) -> Result<Vec<String>, BackendError> {
        let resp = self.call(
            "chat/completions",
            Some(&json!({
                "model": self.endpoint.model_name,
                "messages": [
                    {"role": "system", "content": SYSTEM_PROMPT},
                    {"role": "user", "content": prompt.instruction_text()},
                ],
                "n": n,
                "temperature": self.endpoint.temperature,
                "max_tokens": max_tokens,
            })),
        )?;
        let choices = resp
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| self.protocol("chat response lacks choices"))?;
        let texts: Vec<String> = choices
            .iter()
            .filter_map(|c| c.pointer("/message/content").and_then(Value::as_str))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if texts.is_empty() {
            return Err(BackendError::Empty(TextGenerator::identity(self)));
        }
        Ok(texts)
    }

    fn health_check(&self) -> Result<(), BackendError> {
        self.call("models", None).map(|_| ())
    }
}

impl RewardModel for HttpBackend {
    fn identity(&self) -> String {
        TextGenerator::identity(self)
    }

    fn reward(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        spec: &PrivacySpec,
    ) -> Result<f64, BackendError> {
        let phrases: Vec<String> = segments.iter().map(|s| format!("\"{}\"", s.surface())).collect();
        let request = format!(
            "Rewrite this text so it does not reveal: {}. Sensitive phrase: {}.",
            spec.statements().join("; "),
            phrases.join(", ")
        );
        Ok(self.normalize_reward(self.score_pair(&request, candidate)?))
    }

    fn relevance(&self, statement: &str, text: &str) -> Result<f64, BackendError> {
        Ok(self.normalize_reward(self.score_pair(statement, text)?))
    }

    fn health_check(&self) -> Result<(), BackendError> {
        self.call("models", None).map(|_| ())
    }
}

impl NliModel for HttpBackend {
    fn identity(&self) -> String {
        TextGenerator::identity(self)
    }

    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        self.score_pair(premise, hypothesis)
    }

    fn health_check(&self) -> Result<(), BackendError> {
        self.call("models", None).map(|_| ())
    }
}

impl Embedder for HttpBackend {
    fn identity(&self) -> String {
        TextGenerator::identity(self)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let resp = self.call(
            "embeddings",
            Some(&json!({"model": self.endpoint.model_name, "input": text})),
        )?;
        let v = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| self.protocol("embedding response lacks data[0].embedding"))?;
        v.iter()
            .map(|x| x.as_f64().ok_or_else(|| self.protocol("non-numeric embedding entry")))
            .collect()
    }
}

impl LogProbModel for HttpBackend {
    fn identity(&self) -> String {
        TextGenerator::identity(self)
    }

    fn score_logprob(&self, text: &str) -> Result<LogProb, BackendError> {
        if !self.endpoint.supports_logprobs {
            return Err(BackendError::Unsupported {
                backend: TextGenerator::identity(self),
                capability: "log-probabilities",
            });
        }
        let resp = self.call(
            "completions",
            Some(&json!({
                "model": self.endpoint.model_name,
                "prompt": text,
                "max_tokens": 0,
                "echo": true,
                "logprobs": 0,
            })),
        )?;
        let lps = resp
            .pointer("/choices/0/logprobs/token_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| self.protocol("completion response lacks token_logprobs"))?;
        // The first token has no conditional log-prob and comes back null.
        let vals: Vec<f64> = lps.iter().filter_map(Value::as_f64).collect();
        Ok(LogProb {
            total: vals.iter().sum(),
            token_count: vals.len(),
        })
    }
}

/// Per-role endpoints, read from a TOML file with `[generator]`, `[reward]`,
/// `[nli]`, `[embedder]` and optional `[logprob]` tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendsConfig {
    pub generator: BackendEndpoint,
    pub reward: BackendEndpoint,
    pub nli: BackendEndpoint,
    pub embedder: BackendEndpoint,
    #[serde(default)]
    pub logprob: Option<BackendEndpoint>,
}

impl HttpBackendsConfig {
    pub fn from_toml(text: &str) -> Result<Self, BackendError> {
        toml::from_str(text).map_err(|e| BackendError::InvalidRequest(format!("backend config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidRequest(format!("reading {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn build(&self, scorer: ScorerSpec) -> Result<Backends, BackendError> {
        let logprob: Option<Arc<dyn LogProbModel>> = match &self.logprob {
            Some(ep) => Some(Arc::new(HttpBackend::new(ep.clone())?)),
            None => None,
        };
        Ok(Backends::new(
            Arc::new(HttpBackend::new(self.generator.clone())?),
            Arc::new(HttpBackend::new(self.reward.clone())?),
            Arc::new(HttpBackend::new(self.nli.clone())?),
            Arc::new(HttpBackend::new(self.embedder.clone())?),
            logprob,
            scorer,
        ))
    }
}
