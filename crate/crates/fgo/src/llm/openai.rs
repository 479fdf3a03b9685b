use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmError};
use crate::core::text::estimate_tokens;

pub const ENV_ENDPOINT: &str = "FGO_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "FGO_LLM_API_KEY";
pub const ENV_MODEL: &str = "FGO_LLM_MODEL";

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl OpenAiBackend {
    /// `endpoint` is either the API base (`https://host/v1`) or the full
    /// chat-completions URL.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        OpenAiBackend { agent, url, api_key }
    }

    /// Reads endpoint and key from the environment; `None` when no
    /// endpoint is set.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(Self::new(&endpoint, key, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn is_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    ["context_length_exceeded", "maximum context length", "context window", "too many tokens"]
        .iter()
        .any(|needle| lower.contains(needle))
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(|m| m.as_str()).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(300).collect())
}

impl ChatBackend for OpenAiBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = json!({
            "model": req.model_name,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let started = Instant::now();
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send(body.to_string())
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(format!("HTTP {status}: {}", error_message(&text)))),
            400 | 413 if is_context_overflow(&text) => {
                return Err(LlmError::ContextWindowExceeded(error_message(&text)))
            }
            408 | 409 | 429 | 500..=599 => {
                return Err(LlmError::Transport(format!("HTTP {status}: {}", error_message(&text))))
            }
            _ => return Err(LlmError::InvalidRequest(format!("HTTP {status}: {}", error_message(&text)))),
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::Transport(format!("malformed response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Transport("response has no choices".into()))?;
        let content = choice.message.content.unwrap_or_default();
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("content_filter") => FinishReason::ContentFilter,
            _ => FinishReason::Stop,
        };
        let (prompt_tokens, completion_tokens) = match wire.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (req.estimated_prompt_tokens() as u64, estimate_tokens(&content) as u64),
        };
        Ok(ChatResponse {
            content,
            prompt_tokens,
            completion_tokens,
            finish_reason,
            latency_ms: Some(latency_ms),
        })
    }

    fn describe(&self) -> String {
        format!("openai-compatible({})", self.url)
    }
}
