//! Chat-completion backends behind one client with token accounting,
//! retries, a max-in-flight gate and optional transcript logging.

mod ledger;
pub mod mock;
mod openai;
pub mod presets;
mod transcript;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use ledger::{LedgerEvent, TagTotals, TokenLedger};
pub use mock::{Matcher, MockBackend, MockBuilder, MockRule, Reply};
pub use openai::{OpenAiBackend, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use transcript::Transcript;

use crate::core::text::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Which stage of the pipeline issued a call; the ledger aggregates by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    AgentStep,
    Evaluate,
    Optimize,
    Merge,
}

impl RequestTag {
    pub const ALL: [RequestTag; 4] = [
        RequestTag::AgentStep,
        RequestTag::Evaluate,
        RequestTag::Optimize,
        RequestTag::Merge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::AgentStep => "agent_step",
            RequestTag::Evaluate => "evaluate",
            RequestTag::Optimize => "optimize",
            RequestTag::Merge => "merge",
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: RequestTag,
}

impl ChatRequest {
    /// All message contents joined by newlines; what the mock matches
    /// against and what token pre-checks estimate.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&m.content);
        }
        out
    }

    pub fn estimated_prompt_tokens(&self) -> usize {
        estimate_tokens(&self.rendered())
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("bad temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub finish_reason: FinishReason,
    /// Latency reported by the backend itself (the mock's simulated
    /// latency); when absent the client measures it.
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    /// The prompt does not fit the model's context window. Callers react to
    /// this by trimming what they send.
    #[error("context window exceeded: {0}")]
    ContextWindowExceeded(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// A mock backend had no rule for the request (a bug in the test).
    #[error("mock script error: {0}")]
    Script(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

/// A chat-completion backend. Implementations must be safe to call from
/// many threads at once.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_ms: u64,
    pub cap_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            base_ms: 1_000,
            cap_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            attempts: 1,
            base_ms: 0,
            cap_ms: 0,
        }
    }

    /// Sleep before retry number `retry` (0-based): `min(cap, base * 2^retry)`.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_ms.saturating_mul(factor).min(self.cap_ms))
    }
}

/// Model name, per-stage temperatures and output cap applied to every
/// request built through [`LlmClient::request`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_name: String,
    pub agent_temperature: f64,
    pub optimizer_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            model_name: "mock".into(),
            agent_temperature: 0.0,
            optimizer_temperature: 0.7,
            max_output_tokens: 2_048,
        }
    }
}

struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Gate {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("gate poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Cheap-to-clone handle used by every stage to talk to the model.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    ledger: Arc<TokenLedger>,
    retry: RetryPolicy,
    gate: Arc<Gate>,
    transcript: Option<Arc<Transcript>>,
    settings: Arc<ModelSettings>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmClient {
            backend,
            ledger: Arc::new(TokenLedger::new()),
            retry: RetryPolicy::default(),
            gate: Arc::new(Gate::new(8)),
            transcript: None,
            settings: Arc::new(ModelSettings::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.gate = Arc::new(Gate::new(limit));
        self
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn with_settings(mut self, settings: ModelSettings) -> Self {
        self.settings = Arc::new(settings);
        self
    }

    /// Same backend and limits, recording into `ledger`.
    pub fn with_ledger(&self, ledger: Arc<TokenLedger>) -> Self {
        LlmClient {
            ledger,
            ..self.clone()
        }
    }

    pub fn ledger(&self) -> &Arc<TokenLedger> {
        &self.ledger
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// A request carrying the configured model name and the temperature for
    /// `tag` (agent temperature for agent steps and judging, optimizer
    /// temperature for optimize and merge calls).
    pub fn request(&self, tag: RequestTag, messages: Vec<Message>) -> ChatRequest {
        let temperature = match tag {
            RequestTag::AgentStep | RequestTag::Evaluate => self.settings.agent_temperature,
            RequestTag::Optimize | RequestTag::Merge => self.settings.optimizer_temperature,
        };
        ChatRequest {
            messages,
            model_name: self.settings.model_name.clone(),
            temperature,
            max_output_tokens: self.settings.max_output_tokens,
            request_tag: tag,
        }
    }

    /// Sends `req`, retrying transport errors with capped exponential
    /// backoff. The response is in the ledger before this returns.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.check()?;
        let _permit = self.gate.acquire();
        let attempts = self.retry.attempts.max(1);
        let mut retry = 0;
        loop {
            let started = Instant::now();
            let result = self.backend.send(req);
            if let Some(t) = &self.transcript {
                t.log(req, &result);
            }
            match result {
                Ok(resp) => {
                    let latency = resp
                        .latency_ms
                        .unwrap_or_else(|| started.elapsed().as_millis() as u64);
                    self.ledger
                        .record(req.request_tag, resp.prompt_tokens, resp.completion_tokens, latency);
                    return Ok(resp);
                }
                Err(e) if e.is_retryable() && retry + 1 < attempts => {
                    log::warn!("{} call failed ({e}); retry {} of {}", req.request_tag, retry + 1, attempts - 1);
                    thread::sleep(self.retry.delay(retry));
                    retry += 1;
                }
                Err(LlmError::Transport(msg)) => {
                    return Err(LlmError::Transport(format!("{msg} (after {attempts} attempts)")));
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Builds and sends a single-user-message request.
    pub fn ask(&self, tag: RequestTag, prompt: impl Into<String>) -> Result<ChatResponse, LlmError> {
        self.complete(&self.request(tag, vec![Message::user(prompt)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
        error: LlmError,
    }

    impl ChatBackend for Flaky {
        fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, LlmError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(self.error.clone());
            }
            Ok(ChatResponse {
                content: "ok".into(),
                prompt_tokens: 3,
                completion_tokens: 1,
                finish_reason: FinishReason::Stop,
                latency_ms: Some(0),
            })
        }

        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    fn flaky(failures: usize, error: LlmError) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures,
            calls: AtomicUsize::new(0),
            error,
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            attempts: 5,
            base_ms: 0,
            cap_ms: 0,
        }
    }

    #[test]
    fn backoff_is_capped_exponential() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_secs(1));
        assert_eq!(p.delay(1), Duration::from_secs(2));
        assert_eq!(p.delay(4), Duration::from_secs(16));
        assert_eq!(p.delay(5), Duration::from_secs(30));
        assert_eq!(p.delay(80), Duration::from_secs(30));
    }

    #[test]
    fn transport_errors_are_retried() {
        let backend = flaky(3, LlmError::Transport("reset".into()));
        let client = LlmClient::new(backend.clone()).with_retry(fast());
        assert_eq!(client.ask(RequestTag::Optimize, "hi").unwrap().content, "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
        assert_eq!(client.ledger().calls(RequestTag::Optimize), 1);
    }

    #[test]
    fn retries_exhaust() {
        let backend = flaky(10, LlmError::Transport("reset".into()));
        let client = LlmClient::new(backend.clone()).with_retry(fast());
        let err = client.ask(RequestTag::Merge, "hi").unwrap_err();
        assert!(matches!(err, LlmError::Transport(m) if m.contains("after 5 attempts")));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 5);
        assert_eq!(client.ledger().total().calls, 0);
    }

    #[test]
    fn auth_and_context_errors_are_not_retried() {
        for error in [LlmError::Auth("401".into()), LlmError::ContextWindowExceeded("big".into())] {
            let backend = flaky(10, error.clone());
            let client = LlmClient::new(backend.clone()).with_retry(fast());
            assert_eq!(client.ask(RequestTag::AgentStep, "hi").unwrap_err(), error);
            assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        }
    }

    #[test]
    fn requests_are_checked() {
        let client = LlmClient::new(flaky(0, LlmError::Auth(String::new())));
        let mut req = client.request(RequestTag::AgentStep, vec![]);
        assert!(matches!(client.complete(&req), Err(LlmError::InvalidRequest(_))));
        req.messages.push(Message::user("x"));
        req.temperature = f64::NAN;
        assert!(matches!(client.complete(&req), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn temperatures_follow_the_stage() {
        let client = LlmClient::new(flaky(0, LlmError::Auth(String::new())));
        assert_eq!(client.request(RequestTag::AgentStep, vec![]).temperature, 0.0);
        assert_eq!(client.request(RequestTag::Evaluate, vec![]).temperature, 0.0);
        assert_eq!(client.request(RequestTag::Optimize, vec![]).temperature, 0.7);
        assert_eq!(client.request(RequestTag::Merge, vec![]).temperature, 0.7);
    }

    #[test]
    fn gate_bounds_concurrency() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatBackend for Slow {
            fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, LlmError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(5));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse {
                    content: String::new(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    finish_reason: FinishReason::Stop,
                    latency_ms: None,
                })
            }
            fn describe(&self) -> String {
                "slow".into()
            }
        }
        let backend = Arc::new(Slow {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let client = LlmClient::new(backend.clone()).with_max_in_flight(3);
        thread::scope(|s| {
            for _ in 0..12 {
                let c = client.clone();
                s.spawn(move || c.ask(RequestTag::AgentStep, "x").unwrap());
            }
        });
        assert!(backend.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(client.ledger().total().calls, 12);
    }
}
