//! Deterministic replay backend.
//!
//! The script file is JSON lines. A bare string adds a reply to the default
//! sequence; every trial replays that sequence from the start with its own
//! cursor, so execution order cannot change what any trial sees. An object
//! `{"sample_id": ..., "trial_index": ..., "replies": [...]}` installs a
//! dedicated queue for one trial, which is how tests script divergent or
//! malformed behavior for a single trial.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{BackendSession, ChatMessage, LlmError};

#[derive(Debug, Default)]
pub struct Script {
    default_replies: Vec<String>,
    keyed: HashMap<(String, usize), Vec<String>>,
}

#[derive(Deserialize)]
struct KeyedEntry {
    sample_id: String,
    trial_index: usize,
    replies: Vec<String>,
}

impl Script {
    pub fn from_replies(default_replies: Vec<String>) -> Self {
        Self {
            default_replies,
            keyed: HashMap::new(),
        }
    }

    /// Installs a dedicated reply queue for one (sample, trial).
    pub fn with_trial_replies(
        mut self,
        sample_id: impl Into<String>,
        trial_index: usize,
        replies: Vec<String>,
    ) -> Self {
        self.keyed.insert((sample_id.into(), trial_index), replies);
        self
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LlmError::Config(format!("cannot read script {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut script = Script::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                LlmError::Config(format!("script line {}: {e}", i + 1))
            })?;
            match value {
                serde_json::Value::String(reply) => script.default_replies.push(reply),
                obj @ serde_json::Value::Object(_) => {
                    let entry: KeyedEntry = serde_json::from_value(obj).map_err(|e| {
                        LlmError::Config(format!("script line {}: {e}", i + 1))
                    })?;
                    script
                        .keyed
                        .insert((entry.sample_id, entry.trial_index), entry.replies);
                }
                other => {
                    return Err(LlmError::Config(format!(
                        "script line {}: expected a string or an object, got {other}",
                        i + 1
                    )));
                }
            }
        }
        Ok(script)
    }

    fn replies_for(&self, sample_id: &str, trial_index: usize) -> &[String] {
        self.keyed
            .get(&(sample_id.to_string(), trial_index))
            .map_or(&self.default_replies[..], Vec::as_slice)
    }
}

pub struct ScriptedSession {
    script: Arc<Script>,
    sample_id: String,
    trial_index: usize,
    cursor: usize,
}

impl ScriptedSession {
    pub fn new(script: Arc<Script>, sample_id: &str, trial_index: usize) -> Self {
        Self {
            script,
            sample_id: sample_id.to_string(),
            trial_index,
            cursor: 0,
        }
    }
}

impl BackendSession for ScriptedSession {
    fn complete(&mut self, _messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError> {
        let replies = self.script.replies_for(&self.sample_id, self.trial_index);
        if self.cursor + n > replies.len() {
            return Err(LlmError::ScriptExhausted {
                consumed: self.cursor,
            });
        }
        let out = replies[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        Ok(out)
    }
}
