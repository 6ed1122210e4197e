//! Chat-completion transport for LLM-refined profiles.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::PromptBundle;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("completion was empty")]
    EmptyCompletion,
    #[error("request timed out")]
    Timeout,
    #[error("http status {0}")]
    HttpError(u16),
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub timeout_secs: f64,
    pub max_parallel: usize,
    /// Environment variable holding the bearer token; `None` sends no
    /// authorization header.
    pub api_key_env: Option<String>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            max_retries: 5,
            backoff_base_secs: 1.0,
            timeout_secs: 60.0,
            max_parallel: 4,
            api_key_env: Some("OPENAI_API_KEY".into()),
        }
    }
}

/// Anything that turns a prompt into profile text.
pub trait CompletionClient: Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError>;

    fn model_name(&self) -> &str;

    /// Upper bound on concurrent requests.
    fn max_parallel(&self) -> usize {
        1
    }
}

pub struct HttpCompletionClient {
    config: LlmClientConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(config: LlmClientConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| LlmError::MissingApiKey(var.clone()))?)
            }
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(
                config.timeout_secs.max(0.001),
            )))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            api_key,
        })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<Result<String, LlmError>, LlmError> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout),
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status == 429 {
            return Ok(Err(LlmError::RateLimited(0)));
        }
        if !(200..300).contains(&status) {
            return Err(LlmError::HttpError(status));
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            other => LlmError::Malformed(other.to_string()),
        })?;
        let content = value
            .pointer("/choices/0/message/content")
            .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
        match content {
            Value::String(text) if !text.trim().is_empty() => Ok(Ok(text.trim().to_owned())),
            Value::String(_) | Value::Null => Err(LlmError::EmptyCompletion),
            _ => Err(LlmError::Malformed("content is not a string".into())),
        }
    }
}

impl CompletionClient for HttpCompletionClient {
    /// Sends one request; HTTP 429 is retried with exponential backoff
    /// (`backoff_base * 2^attempt`) up to `max_retries` times.
    fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user_message},
            ],
        });
        for attempt in 0..=self.config.max_retries {
            match self.attempt(&body)? {
                Ok(text) => return Ok(text),
                Err(_) if attempt < self.config.max_retries => {
                    let wait = self.config.backoff_base_secs * 2f64.powi(attempt as i32);
                    if wait > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(wait));
                    }
                }
                Err(_) => break,
            }
        }
        Err(LlmError::RateLimited(self.config.max_retries + 1))
    }

    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn max_parallel(&self) -> usize {
        self.config.max_parallel
    }
}

/// One-shot completion with a fresh client.
pub fn llm_complete(config: &LlmClientConfig, bundle: &PromptBundle) -> Result<String, LlmError> {
    HttpCompletionClient::new(config.clone())?.complete(bundle)
}
