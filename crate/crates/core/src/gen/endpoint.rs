//! OpenAI-compatible chat completion endpoints with concurrency and rate
//! caps and retrying of transient failures.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

use super::mock::MockEndpoint;

pub const DEFAULT_BASE_URL: &str = "http://localhost:8000/v1";
pub const DEFAULT_MODEL: &str = "HuggingFaceH4/zephyr-7b-beta";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
/// Base URLs with this scheme are served by the in-process mock.
pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

impl EndpointError {
    /// 429, 5xx, timeouts and connection failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            EndpointError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            EndpointError::Timeout | EndpointError::Connect(_) => true,
            _ => false,
        }
    }

    pub fn is_auth(&self) -> bool {
        matches!(self, EndpointError::Status { status: 401 | 403, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_seconds: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            backoff_base_seconds: 1.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2f64.powi(retry.saturating_sub(1).min(30) as i32);
        Duration::from_secs_f64((self.backoff_base_seconds * factor).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Keys are never
    /// read from files or flags.
    pub api_key_env: String,
    pub max_concurrent_requests: usize,
    pub requests_per_minute: u32,
    pub retry: RetryPolicy,
    pub timeout_seconds: f64,
    /// Extra request fields (temperature, max_tokens, ...) passed through
    /// verbatim.
    pub params: Map<String, Value>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            model: DEFAULT_MODEL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_concurrent_requests: 8,
            requests_per_minute: 600,
            retry: RetryPolicy::default(),
            timeout_seconds: 120.0,
            params: Map::new(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), EndpointError> {
        let bad = |m: &str| Err(EndpointError::Config(m.to_string()));
        if self.max_concurrent_requests == 0 {
            return bad("max_concurrent_requests must be at least 1");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be at least 1");
        }
        if self.timeout_seconds.is_nan() || self.timeout_seconds <= 0.0 {
            return bad("timeout_seconds must be positive");
        }
        if self.retry.backoff_base_seconds.is_nan() || self.retry.backoff_base_seconds < 0.0 {
            return bad("retry.backoff_base_seconds must not be negative");
        }
        if self.model.trim().is_empty() {
            return bad("model must not be empty");
        }
        for reserved in ["model", "messages"] {
            if self.params.contains_key(reserved) {
                return Err(EndpointError::Config(format!("params may not override {reserved:?}")));
            }
        }
        Ok(())
    }
}

/// A raw chat backend: one request, one response, no retry logic.
#[async_trait]
pub trait ChatEndpoint: Send + Sync {
    fn model_name(&self) -> &str;

    /// Cheap reachability and credential check, run once before a batch.
    async fn probe(&self) -> Result<(), EndpointError>;

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError>;
}

/// JSON body of a chat completion request.
pub fn request_body(model: &str, messages: &[ChatMessage], params: &Map<String, Value>) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(model));
    body.insert("messages".into(), serde_json::to_value(messages).expect("messages serialize"));
    for (k, v) in params {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

/// Extracts `choices[0].message.content` from a chat completion response.
pub fn parse_chat_response(body: &[u8]) -> Result<String, EndpointError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| EndpointError::Malformed(e.to_string()))?;
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| EndpointError::Malformed("missing choices[0].message.content".into()))
}

pub struct OpenAiEndpoint {
    base_url: String,
    model: String,
    api_key: Option<String>,
    params: Map<String, Value>,
    client: reqwest::Client,
}

impl OpenAiEndpoint {
    pub fn new(config: &EndpointConfig) -> Result<Self, EndpointError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without an API key", config.api_key_env);
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_seconds))
            .build()
            .map_err(|e| EndpointError::Config(e.to_string()))?;
        Ok(OpenAiEndpoint {
            base_url: config.base_url.trim_end_matches('/').to_string(),
            model: config.model.clone(),
            api_key,
            params: config.params.clone(),
            client,
        })
    }

    fn authorize(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }
}

fn transport_error(e: reqwest::Error) -> EndpointError {
    if e.is_timeout() {
        EndpointError::Timeout
    } else {
        EndpointError::Connect(e.to_string())
    }
}

#[async_trait]
impl ChatEndpoint for OpenAiEndpoint {
    fn model_name(&self) -> &str {
        &self.model
    }

    async fn probe(&self) -> Result<(), EndpointError> {
        let resp = self
            .authorize(self.client.get(format!("{}/models", self.base_url)))
            .send()
            .await
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        // servers without a models listing still count as reachable
        if status == 401 || status == 403 {
            let body = resp.text().await.unwrap_or_default();
            return Err(EndpointError::Status { status, body });
        }
        Ok(())
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let body = request_body(&self.model, messages, &self.params);
        let resp = self
            .authorize(self.client.post(format!("{}/chat/completions", self.base_url)))
            .json(&body)
            .send()
            .await
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await.map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let body = String::from_utf8_lossy(&bytes[..bytes.len().min(512)]).into_owned();
            return Err(EndpointError::Status { status, body });
        }
        parse_chat_response(&bytes)
    }
}

/// Sliding-window limiter: at most `cap` acquisitions in any `window`.
pub struct RateLimiter {
    cap: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(cap: usize, window: Duration) -> Self {
        RateLimiter {
            cap: cap.max(1),
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(cap: u32) -> Self {
        Self::new(cap as usize, Duration::from_secs(60))
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().await;
                let now = Instant::now();
                while issued.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.cap {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(issued[0])
            };
            tokio::time::sleep(wait).await;
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    #[error("gave up after {attempts} attempt(s): {source}")]
    Exhausted { attempts: u32, source: EndpointError },
    #[error(transparent)]
    Fatal(EndpointError),
}

impl CallError {
    pub fn retries(&self) -> u32 {
        match self {
            CallError::Exhausted { attempts, .. } => attempts.saturating_sub(1),
            CallError::Fatal(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    /// Failed attempts before this one succeeded.
    pub retries: u32,
}

/// An endpoint wrapped with the request policy from its [`EndpointConfig`]:
/// bounded in-flight requests, a per-minute cap, per-request timeout and
/// exponential backoff on transient failures.
pub struct ManagedEndpoint {
    inner: Arc<dyn ChatEndpoint>,
    permits: Semaphore,
    limiter: RateLimiter,
    retry: RetryPolicy,
    timeout: Duration,
    max_concurrent: usize,
}

impl ManagedEndpoint {
    pub fn new(inner: Arc<dyn ChatEndpoint>, config: &EndpointConfig) -> Result<Self, EndpointError> {
        config.validate()?;
        Ok(ManagedEndpoint {
            inner,
            permits: Semaphore::new(config.max_concurrent_requests),
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            retry: config.retry,
            timeout: Duration::from_secs_f64(config.timeout_seconds),
            max_concurrent: config.max_concurrent_requests,
        })
    }

    /// Builds the backend named by `config.base_url`: the in-process mock for
    /// `mock://` URLs, an HTTP client otherwise.
    pub fn from_config(config: &EndpointConfig) -> Result<Self, EndpointError> {
        let inner: Arc<dyn ChatEndpoint> = if config.base_url.starts_with(MOCK_SCHEME) {
            Arc::new(MockEndpoint::builtin(&config.model))
        } else {
            Arc::new(OpenAiEndpoint::new(config)?)
        };
        Self::new(inner, config)
    }

    pub fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub async fn probe(&self) -> Result<(), EndpointError> {
        self.inner.probe().await
    }

    pub async fn chat(&self, messages: &[ChatMessage]) -> Result<Completion, CallError> {
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                // stamp the rate window only once a slot is free, right before sending
                self.limiter.acquire().await;
                match tokio::time::timeout(self.timeout, self.inner.complete(messages)).await {
                    Ok(result) => result,
                    Err(_) => Err(EndpointError::Timeout),
                }
            };
            match result {
                Ok(content) => {
                    return Ok(Completion {
                        content,
                        retries: attempt - 1,
                    })
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    log::debug!("attempt {attempt} failed ({e}); retrying");
                    tokio::time::sleep(self.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                Err(e) if e.is_transient() => return Err(CallError::Exhausted { attempts: attempt, source: e }),
                Err(e) => return Err(CallError::Fatal(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::mock::{MockEndpoint, MockReply};

    fn config(max_concurrent: usize, rpm: u32, attempts: u32) -> EndpointConfig {
        EndpointConfig {
            base_url: "mock://test".into(),
            max_concurrent_requests: max_concurrent,
            requests_per_minute: rpm,
            retry: RetryPolicy {
                max_attempts: attempts,
                backoff_base_seconds: 0.5,
            },
            timeout_seconds: 5.0,
            ..EndpointConfig::default()
        }
    }

    #[test]
    fn response_parsing() {
        let ok = br#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"Hi"}}]}"#;
        assert_eq!(parse_chat_response(ok).unwrap(), "Hi");
        assert!(matches!(parse_chat_response(b"{}"), Err(EndpointError::Malformed(_))));
        assert!(matches!(parse_chat_response(b"nope"), Err(EndpointError::Malformed(_))));
        assert!(matches!(
            parse_chat_response(br#"{"choices":[{"message":{"content":null}}]}"#),
            Err(EndpointError::Malformed(_))
        ));
    }

    #[test]
    fn request_body_shape() {
        let mut params = Map::new();
        params.insert("temperature".into(), json!(0.7));
        let body = request_body("m", &[ChatMessage::system("s"), ChatMessage::user("u")], &params);
        assert_eq!(
            body,
            json!({"model":"m","messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],"temperature":0.7})
        );
    }

    #[test]
    fn transient_classification() {
        let status = |s| EndpointError::Status { status: s, body: String::new() };
        assert!(status(429).is_transient());
        assert!(status(503).is_transient());
        assert!(!status(400).is_transient());
        assert!(status(401).is_auth() && !status(401).is_transient());
        assert!(EndpointError::Timeout.is_transient());
    }

    #[test]
    fn config_validation() {
        assert!(config(0, 10, 1).validate().is_err());
        assert!(config(1, 10, 0).validate().is_err());
        assert!(config(1, 0, 1).validate().is_err());
        let mut c = config(1, 1, 1);
        c.params.insert("model".into(), json!("x"));
        assert!(c.validate().is_err());
        assert!(config(1, 1, 1).validate().is_ok());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_attempts: 4,
            backoff_base_seconds: 0.5,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(3), Duration::from_secs(2));
    }

    #[tokio::test(start_paused = true)]
    async fn retries_then_succeeds() {
        let mock = Arc::new(
            MockEndpoint::new("m", |_| MockReply::Content("ok".into()))
                .with_script([MockReply::Status(429), MockReply::Status(429)]),
        );
        let ep = ManagedEndpoint::new(mock.clone(), &config(1, 100, 3)).unwrap();
        let started = Instant::now();
        let done = ep.chat(&[ChatMessage::user("hi")]).await.unwrap();
        assert_eq!(done, Completion { content: "ok".into(), retries: 2 });
        assert_eq!(mock.calls(), 3);
        // 0.5s + 1.0s of backoff
        assert!(started.elapsed() >= Duration::from_millis(1500));
    }

    #[tokio::test(start_paused = true)]
    async fn retries_exhaust() {
        let mock = Arc::new(MockEndpoint::new("m", |_| MockReply::Status(503)));
        let ep = ManagedEndpoint::new(mock.clone(), &config(1, 100, 3)).unwrap();
        let err = ep.chat(&[ChatMessage::user("hi")]).await.unwrap_err();
        assert!(matches!(err, CallError::Exhausted { attempts: 3, .. }));
        assert_eq!(err.retries(), 2);
        assert_eq!(mock.calls(), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn client_errors_are_not_retried() {
        let mock = Arc::new(MockEndpoint::new("m", |_| MockReply::Status(400)));
        let ep = ManagedEndpoint::new(mock.clone(), &config(1, 100, 5)).unwrap();
        assert!(matches!(ep.chat(&[]).await, Err(CallError::Fatal(_))));
        assert_eq!(mock.calls(), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn hung_requests_time_out_and_retry() {
        let mock = Arc::new(MockEndpoint::new("m", |_| MockReply::Content("late".into())).with_script([MockReply::Hang]));
        let ep = ManagedEndpoint::new(mock.clone(), &config(1, 100, 2)).unwrap();
        assert_eq!(ep.chat(&[]).await.unwrap().retries, 1);
    }

    #[tokio::test(start_paused = true)]
    async fn concurrency_cap_holds() {
        let mock = Arc::new(MockEndpoint::new("m", |_| MockReply::Content("x".into())).with_latency(Duration::from_millis(50)));
        let ep = Arc::new(ManagedEndpoint::new(mock.clone(), &config(3, 10_000, 1)).unwrap());
        let tasks: Vec<_> = (0..40)
            .map(|_| {
                let ep = ep.clone();
                tokio::spawn(async move { ep.chat(&[]).await.unwrap() })
            })
            .collect();
        for t in tasks {
            t.await.unwrap();
        }
        assert_eq!(mock.calls(), 40);
        assert_eq!(mock.peak_in_flight(), 3);
    }

    #[tokio::test(start_paused = true)]
    async fn rate_window_holds() {
        let limiter = Arc::new(RateLimiter::per_minute(10));
        let stamps = Arc::new(std::sync::Mutex::new(Vec::new()));
        let tasks: Vec<_> = (0..35)
            .map(|_| {
                let (limiter, stamps) = (limiter.clone(), stamps.clone());
                tokio::spawn(async move {
                    limiter.acquire().await;
                    stamps.lock().unwrap().push(Instant::now());
                })
            })
            .collect();
        for t in tasks {
            t.await.unwrap();
        }
        let mut stamps = stamps.lock().unwrap().clone();
        stamps.sort();
        for (i, t) in stamps.iter().enumerate() {
            let in_window = stamps[i..].iter().take_while(|s| s.duration_since(*t) < Duration::from_secs(60)).count();
            assert!(in_window <= 10, "{in_window} requests inside one minute");
        }
        // 35 requests at 10/min need at least three full windows
        assert!(stamps[34].duration_since(stamps[0]) >= Duration::from_secs(180));
    }
}
