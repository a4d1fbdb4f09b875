//! Chat-session abstraction over model backends.
//!
//! A trial owns exactly one [`ChatTranscript`] and one backend session, so
//! concurrent trials can never interleave messages. The whole conversation
//! history is the prompt; when it outgrows the token budget the oldest
//! non-pinned messages are evicted.

mod http;
mod oracle;
mod scripted;

pub use http::HttpBackend;
pub use oracle::PerfectOracleSession;
pub use scripted::{Script, ScriptedSession};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendConfig, BackendKind};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("script exhausted after {consumed} replies")]
    ScriptExhausted { consumed: usize },
    #[error("pinned prefix needs {pinned_tokens} tokens but the budget is {budget}")]
    PinnedOverBudget { pinned_tokens: usize, budget: usize },
    #[error("api key environment variable {var} is not set")]
    MissingApiKey { var: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        f.write_str(name)
    }
}

/// Rough token count: characters divided by four, rounded up. Exact
/// tokenizers are model-specific; truncation only needs a consistent
/// monotone estimate.
pub fn estimate_tokens(content: &str) -> usize {
    content.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub token_estimate: usize,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        let content = content.into();
        assert!(!content.is_empty(), "message content must be non-empty");
        let token_estimate = estimate_tokens(&content);
        Self {
            role,
            content,
            token_estimate,
        }
    }
}

/// Ordered message history with a token budget. Messages up to
/// `pinned_prefix_len` (the system message and the loss-definition
/// exchange) are never evicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTranscript {
    messages: Vec<ChatMessage>,
    pinned_prefix_len: usize,
    token_budget: usize,
}

impl ChatTranscript {
    pub fn new(token_budget: usize) -> Self {
        assert!(token_budget > 0, "token budget must be positive");
        Self {
            messages: Vec::new(),
            pinned_prefix_len: 0,
            token_budget,
        }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.messages.push(ChatMessage::new(role, content));
    }

    /// Marks everything pushed so far as exempt from eviction.
    pub fn pin_prefix(&mut self) {
        self.pinned_prefix_len = self.messages.len();
    }

    pub fn pinned_prefix_len(&self) -> usize {
        self.pinned_prefix_len
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.messages.iter().map(|m| m.token_estimate).sum()
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    /// Evicts the oldest non-pinned messages until the transcript fits the
    /// budget. The pinned prefix and the most recent two messages are never
    /// evicted, so a transcript whose mandatory messages exceed the budget
    /// is left as small as possible rather than emptied further.
    pub fn truncate(&mut self) -> Result<usize, LlmError> {
        let pinned_tokens: usize = self.messages[..self.pinned_prefix_len]
            .iter()
            .map(|m| m.token_estimate)
            .sum();
        if pinned_tokens > self.token_budget {
            return Err(LlmError::PinnedOverBudget {
                pinned_tokens,
                budget: self.token_budget,
            });
        }
        let mut evicted = 0;
        while self.total_tokens() > self.token_budget {
            let evictable_end = self.messages.len().saturating_sub(2);
            if self.pinned_prefix_len >= evictable_end {
                break;
            }
            self.messages.remove(self.pinned_prefix_len);
            evicted += 1;
        }
        Ok(evicted)
    }
}

/// One backend conversation handle, owned by a single trial.
pub trait BackendSession: Send {
    /// Returns `n` completions for the given message history.
    fn complete(&mut self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError>;
}

/// Shared backend state; cheap to clone across trials.
#[derive(Clone)]
pub enum Backend {
    Http(Arc<HttpBackend>),
    Scripted(Arc<Script>),
    PerfectOracle,
}

impl Backend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, LlmError> {
        match cfg.kind {
            BackendKind::Http => Ok(Backend::Http(Arc::new(HttpBackend::new(cfg)?))),
            BackendKind::Scripted => {
                let path = cfg.script.as_ref().ok_or_else(|| {
                    LlmError::Config("scripted backend requires a script file".into())
                })?;
                Ok(Backend::Scripted(Arc::new(Script::load(path)?)))
            }
            BackendKind::PerfectOracle => Ok(Backend::PerfectOracle),
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Http(_) => BackendKind::Http,
            Backend::Scripted(_) => BackendKind::Scripted,
            Backend::PerfectOracle => BackendKind::PerfectOracle,
        }
    }

    /// Opens the per-trial session. Scripted sessions get their own cursor
    /// (and a dedicated reply queue when the script keys this trial), which
    /// keeps trials deterministic at any parallelism.
    pub fn session(&self, sample_id: &str, trial_index: usize) -> Box<dyn BackendSession> {
        match self {
            Backend::Http(shared) => Box::new(http::HttpSession::new(Arc::clone(shared))),
            Backend::Scripted(script) => {
                Box::new(ScriptedSession::new(Arc::clone(script), sample_id, trial_index))
            }
            Backend::PerfectOracle => Box::new(PerfectOracleSession),
        }
    }
}

/// A transcript bound to a backend session: the unit of conversation a
/// trial drives.
pub struct ChatSession {
    transcript: ChatTranscript,
    backend: Box<dyn BackendSession>,
}

impl ChatSession {
    pub fn new(transcript: ChatTranscript, backend: Box<dyn BackendSession>) -> Self {
        Self { transcript, backend }
    }

    pub fn transcript(&self) -> &ChatTranscript {
        &self.transcript
    }

    pub fn pin_prefix(&mut self) {
        self.transcript.pin_prefix();
    }

    pub fn push_system(&mut self, content: &str) {
        self.transcript.push(Role::System, content);
    }

    /// Appends the user message, truncates to budget, and returns `n`
    /// completions without committing any of them. The caller selects one
    /// and calls [`ChatSession::commit`].
    pub fn sample(&mut self, user_msg: &str, n: usize) -> Result<Vec<String>, LlmError> {
        assert!(n >= 1, "sample count must be at least 1");
        self.transcript.push(Role::User, user_msg);
        self.transcript.truncate()?;
        let replies = self.backend.complete(self.transcript.messages(), n)?;
        if replies.len() != n {
            return Err(LlmError::Protocol(format!(
                "backend returned {} completions, expected {n}",
                replies.len()
            )));
        }
        if replies.iter().any(String::is_empty) {
            return Err(LlmError::Protocol("backend returned an empty completion".into()));
        }
        Ok(replies)
    }

    /// Appends the chosen assistant reply.
    pub fn commit(&mut self, reply: &str) {
        self.transcript.push(Role::Assistant, reply);
    }

    /// Single-completion round trip: append, truncate, complete, commit.
    pub fn send(&mut self, user_msg: &str) -> Result<String, LlmError> {
        let mut replies = self.sample(user_msg, 1)?;
        let reply = replies.pop().expect("exactly one completion");
        self.commit(&reply);
        Ok(reply)
    }
}
