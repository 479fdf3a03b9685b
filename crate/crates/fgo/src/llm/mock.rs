//! Scripted, deterministic backend for tests and offline runs.

use std::fmt;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use regex::Regex;

use super::{ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmError, RequestTag};
use crate::core::text::estimate_tokens;

pub enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
}

impl Matcher {
    pub fn regex(pattern: &str) -> Result<Self, regex::Error> {
        Regex::new(pattern).map(Matcher::Regex)
    }
}

pub type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, String> + Send + Sync;

pub enum Reply {
    /// Literal text. `{seed}` expands to the backend seed; with a regex
    /// matcher, `$1` / `${name}` expand to captures.
    Template(String),
    /// Computed from the request. An `Err` surfaces as a script error.
    Func(Arc<ReplyFn>),
}

impl Reply {
    pub fn func(f: impl Fn(&ChatRequest) -> Result<String, String> + Send + Sync + 'static) -> Self {
        Reply::Func(Arc::new(f))
    }
}

pub struct MockRule {
    pub tag: Option<RequestTag>,
    pub matcher: Matcher,
    pub reply: Reply,
}

pub struct MockBackend {
    rules: Vec<MockRule>,
    context_limit: usize,
    seed: u64,
    latency_ms: u64,
    sleep: bool,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("rules", &self.rules.len())
            .field("context_limit", &self.context_limit)
            .field("seed", &self.seed)
            .finish()
    }
}

pub struct MockBuilder {
    inner: MockBackend,
}

impl MockBuilder {
    pub fn context_limit(mut self, tokens: usize) -> Self {
        self.inner.context_limit = tokens;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.inner.seed = seed;
        self
    }

    /// Simulated per-call latency reported to the ledger; with `sleep` the
    /// call also blocks for that long.
    pub fn latency(mut self, ms: u64, sleep: bool) -> Self {
        self.inner.latency_ms = ms;
        self.inner.sleep = sleep;
        self
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.inner.rules.push(rule);
        self
    }

    pub fn on(self, tag: RequestTag, matcher: Matcher, reply: Reply) -> Self {
        self.rule(MockRule {
            tag: Some(tag),
            matcher,
            reply,
        })
    }

    pub fn on_any(self, matcher: Matcher, reply: Reply) -> Self {
        self.rule(MockRule {
            tag: None,
            matcher,
            reply,
        })
    }

    pub fn build(self) -> MockBackend {
        self.inner
    }
}

impl MockBackend {
    pub fn builder() -> MockBuilder {
        MockBuilder {
            inner: MockBackend {
                rules: Vec::new(),
                context_limit: usize::MAX,
                seed: 0,
                latency_ms: 0,
                sleep: false,
            },
        }
    }

    pub fn context_limit(&self) -> usize {
        self.context_limit
    }

    fn reply_for(&self, req: &ChatRequest, prompt: &str) -> Result<String, LlmError> {
        for rule in &self.rules {
            if rule.tag.is_some_and(|t| t != req.request_tag) {
                continue;
            }
            let captures = match &rule.matcher {
                Matcher::Any => None,
                Matcher::Contains(s) => {
                    if !prompt.contains(s.as_str()) {
                        continue;
                    }
                    None
                }
                Matcher::Regex(re) => match re.captures(prompt) {
                    Some(c) => Some(c),
                    None => continue,
                },
            };
            return match &rule.reply {
                Reply::Template(t) => {
                    let t = t.replace("{seed}", &self.seed.to_string());
                    Ok(match captures {
                        Some(c) => {
                            let mut out = String::new();
                            c.expand(&t, &mut out);
                            out
                        }
                        None => t,
                    })
                }
                Reply::Func(f) => f(req).map_err(LlmError::Script),
            };
        }
        let head: String = prompt.chars().take(120).collect();
        Err(LlmError::Script(format!("no rule for {} request: {head:?}", req.request_tag)))
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let prompt = req.rendered();
        let prompt_tokens = estimate_tokens(&prompt);
        if prompt_tokens > self.context_limit {
            return Err(LlmError::ContextWindowExceeded(format!(
                "prompt of {prompt_tokens} estimated tokens exceeds the context limit of {}",
                self.context_limit
            )));
        }
        let content = self.reply_for(req, &prompt)?;
        if self.sleep && self.latency_ms > 0 {
            thread::sleep(Duration::from_millis(self.latency_ms));
        }
        let completion_tokens = estimate_tokens(&content) as u64;
        let finish_reason = if completion_tokens > u64::from(req.max_output_tokens) {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Ok(ChatResponse {
            content,
            prompt_tokens: prompt_tokens as u64,
            completion_tokens,
            finish_reason,
            latency_ms: Some(self.latency_ms),
        })
    }

    fn describe(&self) -> String {
        format!("mock(rules={}, context_limit={}, seed={})", self.rules.len(), self.context_limit, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmClient, Message, RetryPolicy};

    fn client(mock: MockBackend) -> LlmClient {
        LlmClient::new(Arc::new(mock)).with_retry(RetryPolicy::none())
    }

    #[test]
    fn scripted_reply_and_token_counts() {
        let c = client(
            MockBackend::builder()
                .on(RequestTag::Merge, Matcher::Any, Reply::Template("R".into()))
                .build(),
        );
        let resp = c.ask(RequestTag::Merge, "12345678").unwrap();
        assert_eq!(resp.content, "R");
        assert_eq!((resp.prompt_tokens, resp.completion_tokens), (2, 1));
        assert!(matches!(c.ask(RequestTag::Optimize, "x"), Err(LlmError::Script(_))));
    }

    #[test]
    fn context_limit_is_enforced() {
        let c = client(
            MockBackend::builder()
                .context_limit(4000)
                .on_any(Matcher::Any, Reply::Template("ok".into()))
                .build(),
        );
        let big = "x".repeat(20_000);
        assert!(matches!(
            c.ask(RequestTag::Optimize, big),
            Err(LlmError::ContextWindowExceeded(_))
        ));
        assert!(c.ledger().is_empty());
        assert!(c.ask(RequestTag::Optimize, "x".repeat(16_000)).is_ok());
    }

    #[test]
    fn templates_expand_captures_and_seed() {
        let c = client(
            MockBackend::builder()
                .seed(42)
                .on_any(
                    Matcher::regex(r"token (?P<t>\w+)").unwrap(),
                    Reply::Template("got ${t} / $t with {seed}".into()),
                )
                .build(),
        );
        assert_eq!(c.ask(RequestTag::AgentStep, "the token abc").unwrap().content, "got abc / abc with 42");
    }

    #[test]
    fn first_matching_rule_wins() {
        let c = client(
            MockBackend::builder()
                .on_any(Matcher::Contains("judge".into()), Reply::Template("VERDICT: PASS".into()))
                .on_any(Matcher::Any, Reply::func(|r| Ok(format!("{} messages", r.messages.len()))))
                .build(),
        );
        assert_eq!(c.ask(RequestTag::Evaluate, "please judge").unwrap().content, "VERDICT: PASS");
        let req = c.request(RequestTag::Evaluate, vec![Message::system("s"), Message::user("u")]);
        assert_eq!(c.complete(&req).unwrap().content, "2 messages");
    }

    #[test]
    fn identical_runs_give_identical_ledgers() {
        let run = || {
            let c = client(
                MockBackend::builder()
                    .on_any(Matcher::Any, Reply::func(|r| Ok(r.rendered().to_uppercase())))
                    .build(),
            );
            for p in ["alpha", "beta gamma", "delta"] {
                c.ask(RequestTag::Optimize, p).unwrap();
            }
            c.ledger().events()
        };
        assert_eq!(run(), run());
    }
}
