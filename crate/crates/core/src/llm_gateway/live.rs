//! HTTP backend for OpenAI-compatible chat-completion endpoints.

use std::env;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;
use serde_json::json;

use super::backend::{Backend, BackendError, Prompt};

pub const ENV_API_BASE: &str = "TUTEE_API_BASE";
pub const ENV_API_KEY: &str = "TUTEE_API_KEY";
pub const ENV_MODEL: &str = "TUTEE_MODEL";

const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
const DEFAULT_MODEL: &str = "gpt-4-0613";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
}

impl LiveConfig {
    pub fn from_env() -> Self {
        Self {
            api_base: env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_string()),
            api_key: env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string()),
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        Ok(Self {
            config,
            client,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }
}

impl Backend for LiveBackend {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": prompt.temperature,
            "messages": [{"role": "user", "content": prompt.text}],
        });
        let mut request = self.client.post(url).timeout(prompt.timeout).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("http {status}: {detail}")));
        }
        let parsed: ChatResponse = response.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Fatal(format!("bad response body: {e}"))
            }
        })?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }

    fn calls(&self) -> Option<usize> {
        Some(self.calls.load(Ordering::SeqCst))
    }
}
