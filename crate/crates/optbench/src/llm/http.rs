//! Live chat-completion backend over the JSON protocol:
//! request `{model, temperature, n, messages}`, response with a list of
//! assistant message choices.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendSession, ChatMessage, LlmError};
use crate::config::BackendConfig;

/// Caps concurrent in-flight requests across all trials.
struct Gate {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.freed.wait(permits).expect("gate lock");
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate lock");
        *permits += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model_name: String,
    temperature: f64,
    samples_per_call: usize,
    max_retries: u32,
    gate: Gate,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    temperature: f64,
    n: usize,
    messages: Vec<WireMessage<'a>>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, LlmError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .or_else(|| std::env::var("OPTBENCH_ENDPOINT").ok())
            .ok_or_else(|| {
                LlmError::Config(
                    "http backend needs an endpoint (config `endpoint` or OPTBENCH_ENDPOINT)".into(),
                )
            })?;
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| LlmError::MissingApiKey {
            var: cfg.api_key_env.clone(),
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            model_name: cfg.model_name.clone(),
            temperature: cfg.temperature,
            samples_per_call: cfg.samples_per_call.max(1),
            max_retries: cfg.max_retries,
            gate: Gate::new(cfg.max_concurrent_requests.max(1)),
        })
    }

    /// One POST asking for `n` completions, with retry and exponential
    /// backoff on transport errors, 429 and 5xx.
    fn request(&self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError> {
        let body = CompletionRequest {
            model: &self.model_name,
            temperature: self.temperature,
            n,
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        super::Role::System => "system",
                        super::Role::User => "user",
                        super::Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            let _permit = self.gate.acquire();
            let result = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let retryable = match result {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: CompletionResponse = resp.json().map_err(|e| {
                            LlmError::Protocol(format!("malformed completion response: {e}"))
                        })?;
                        if parsed.choices.is_empty() {
                            return Err(LlmError::Protocol("response carried no choices".into()));
                        }
                        return Ok(parsed
                            .choices
                            .into_iter()
                            .map(|c| c.message.content)
                            .collect());
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        format!("status {status}")
                    } else {
                        return Err(LlmError::Protocol(format!(
                            "endpoint answered {status}: {}",
                            resp.text().unwrap_or_default()
                        )));
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempts > self.max_retries {
                return Err(LlmError::Transport {
                    attempts,
                    detail: retryable,
                });
            }
            let backoff = Duration::from_millis(200 * (1 << (attempts - 1).min(5)));
            std::thread::sleep(backoff);
        }
    }
}

pub struct HttpSession {
    backend: Arc<HttpBackend>,
}

impl HttpSession {
    pub fn new(backend: Arc<HttpBackend>) -> Self {
        Self { backend }
    }
}

impl BackendSession for HttpSession {
    fn complete(&mut self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError> {
        let mut collected = Vec::with_capacity(n);
        while collected.len() < n {
            let ask = (n - collected.len()).min(self.backend.samples_per_call);
            let replies = self.backend.request(messages, ask)?;
            // a server free to return fewer choices than asked still makes
            // progress; an empty batch already errored above
            collected.extend(replies);
        }
        collected.truncate(n);
        Ok(collected)
    }
}
