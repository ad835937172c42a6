//! Uniform access to a text-completion provider through named prompt templates.
//!
//! Every model call in the crate goes through [`Gateway::complete`]: the
//! template is rendered with the request's bindings, sent to the configured
//! [`Backend`], and retried with exponential backoff on transient failures.
//! Scripted and record/replay backends make the whole system runnable offline.

mod backend;
mod live;
mod replay;
mod template;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{Backend, BackendError, FailingBackend, Prompt, ScriptedBackend};
pub use live::{LiveBackend, LiveConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use replay::{
    fingerprint, Cassette, CassetteEntry, CassetteError, RecordingBackend, ReplayBackend,
    CASSETTE_VERSION,
};
pub use template::{PromptTemplate, TemplateError, TemplateRegistry, TEMPLATE_EXTENSION};

/// Template names the crate renders.
pub mod names {
    pub const EXTRACT: &str = "extract";
    pub const UPDATE: &str = "update";
    pub const RETRIEVE: &str = "retrieve";
    pub const COMPOSE: &str = "compose";
    pub const CLASSIFY: &str = "classify";
    pub const DEEP_QUESTION: &str = "deep_question";
    pub const THINKING_QUESTION: &str = "thinking_question";
    pub const PARAPHRASE: &str = "paraphrase";
    pub const RESPONSE_QUALITY: &str = "response_quality";
    pub const SUMMARIZE: &str = "summarize";
    pub const PERSONA: &str = "persona";
}

/// Which provider to talk to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// OpenAI-compatible HTTP endpoint configured from the environment.
    Live,
    /// Completions served from a cassette file.
    Replay(PathBuf),
    /// The built-in offline heuristic backend.
    Scripted,
}

impl BackendChoice {
    /// Parses `live`, `scripted` or `replay`; replay needs a cassette path.
    pub fn parse(kind: &str, cassette: Option<PathBuf>) -> Result<Self, String> {
        match kind {
            "live" => Ok(BackendChoice::Live),
            "scripted" => Ok(BackendChoice::Scripted),
            "replay" => cassette
                .map(BackendChoice::Replay)
                .ok_or_else(|| "replay backend needs a cassette path".to_string()),
            other => Err(format!("unknown backend `{other}` (expected live, replay or scripted)")),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, String> {
        Ok(match self {
            BackendChoice::Live => {
                let config = LiveConfig::from_env();
                if config.api_key.is_none() {
                    return Err(format!("live backend needs {ENV_API_KEY}"));
                }
                Arc::new(LiveBackend::new(config).map_err(|e| e.to_string())?)
            }
            BackendChoice::Replay(path) => {
                Arc::new(ReplayBackend::load(path).map_err(|e| e.to_string())?)
            }
            BackendChoice::Scripted => Arc::new(crate::offline::HeuristicBackend::new()),
        })
    }
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("replay", path)) => Self::parse("replay", Some(PathBuf::from(path))),
            _ => Self::parse(s, None),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("completion timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("provider returned an empty response after {attempts} attempt(s)")]
    EmptyResponse { attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestDefaults {
    pub temperature: f64,
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// First retry delay; doubles on each further retry.
    #[serde(with = "millis")]
    pub backoff: Duration,
}

impl Default for RequestDefaults {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_attempts: 3,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(500),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template: String,
    pub bindings: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl CompletionRequest {
    pub fn bind(mut self, key: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(key.to_string(), value.into());
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }
}

/// Provider text plus the prompt that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt: String,
}

#[derive(Clone)]
pub struct Gateway {
    registry: Arc<TemplateRegistry>,
    backend: Arc<dyn Backend>,
    defaults: RequestDefaults,
}

impl Gateway {
    pub fn new(registry: TemplateRegistry, backend: Arc<dyn Backend>) -> Self {
        Self {
            registry: Arc::new(registry),
            backend,
            defaults: RequestDefaults::default(),
        }
    }

    pub fn with_defaults(mut self, defaults: RequestDefaults) -> Self {
        self.defaults = defaults;
        self
    }

    pub fn defaults(&self) -> RequestDefaults {
        self.defaults
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    /// Starts a request for `template` with the gateway defaults.
    pub fn request(&self, template: &str) -> CompletionRequest {
        CompletionRequest {
            template: template.to_string(),
            bindings: BTreeMap::new(),
            temperature: self.defaults.temperature,
            max_attempts: self.defaults.max_attempts.max(1),
            timeout: self.defaults.timeout,
        }
    }

    pub fn render(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let template = self
            .registry
            .get(&request.template)
            .ok_or_else(|| GatewayError::UnknownTemplate(request.template.clone()))?;
        Ok(template.render(&request.bindings)?)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let text = self.render(request)?;
        let prompt = Prompt {
            template: &request.template,
            bindings: &request.bindings,
            text: &text,
            temperature: request.temperature,
            timeout: request.timeout,
        };
        let max_attempts = request.max_attempts.max(1);
        let mut last = BackendError::Transient("no attempt made".into());
        let mut empty = false;
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let delay = self.defaults.backoff.saturating_mul(1 << (attempt - 2).min(16));
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
            }
            match self.backend.complete(&prompt) {
                Ok(out) if out.trim().is_empty() => {
                    empty = true;
                    tracing::warn!(template = %request.template, attempt, "empty completion");
                }
                Ok(out) => {
                    return Ok(Completion { text: out, prompt: text });
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Provider {
                        attempts: attempt,
                        message,
                    });
                }
                Err(err) => {
                    empty = false;
                    tracing::warn!(template = %request.template, attempt, error = %err, "completion failed");
                    last = err;
                }
            }
        }
        if empty {
            return Err(GatewayError::EmptyResponse {
                attempts: max_attempts,
            });
        }
        Err(match last {
            BackendError::Timeout => GatewayError::Timeout {
                attempts: max_attempts,
            },
            other => GatewayError::Provider {
                attempts: max_attempts,
                message: other.to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn registry() -> TemplateRegistry {
        let mut r = TemplateRegistry::new();
        r.insert(
            PromptTemplate::parse("name: echo\n---\nSay ${word}.", "echo").unwrap(),
            "echo.tmpl".into(),
        )
        .unwrap();
        r
    }

    fn fast(gw: Gateway) -> Gateway {
        gw.with_defaults(RequestDefaults {
            backoff: Duration::ZERO,
            ..RequestDefaults::default()
        })
    }

    #[test]
    fn scripted_fixture_passthrough() {
        let backend = Arc::new(ScriptedBackend::new().with("Say hi.", "NONE"));
        let gw = Gateway::new(registry(), backend);
        let out = gw.complete(&gw.request("echo").bind("word", "hi")).unwrap();
        assert_eq!(out.text, "NONE");
        assert_eq!(out.prompt, "Say hi.");
    }

    #[test]
    fn unbound_and_unknown_templates_error() {
        let gw = Gateway::new(registry(), Arc::new(ScriptedBackend::new()));
        assert!(matches!(
            gw.complete(&gw.request("echo")),
            Err(GatewayError::Template(TemplateError::Unbound(_)))
        ));
        assert!(matches!(
            gw.complete(&gw.request("nope")),
            Err(GatewayError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn transient_errors_retry_up_to_max_attempts() {
        let backend = Arc::new(FailingBackend::transient());
        let gw = fast(Gateway::new(registry(), backend.clone()));
        let err = gw.complete(&gw.request("echo").bind("word", "x")).unwrap_err();
        assert!(matches!(err, GatewayError::Provider { attempts: 3, .. }));
        assert_eq!(backend.calls(), Some(3));
    }

    #[test]
    fn fatal_errors_do_not_retry() {
        let backend = Arc::new(FailingBackend::default());
        let gw = fast(Gateway::new(registry(), backend.clone()));
        assert!(gw.complete(&gw.request("echo").bind("word", "x")).is_err());
        assert_eq!(backend.calls(), Some(1));
    }

    #[test]
    fn recovers_after_transient_failure_and_flags_empty() {
        let n = Arc::new(AtomicU32::new(0));
        let counter = n.clone();
        let backend = ScriptedBackend::new().with_handler(move |_| {
            match counter.fetch_add(1, Ordering::SeqCst) {
                0 => Err(BackendError::Timeout),
                _ => Ok("ok".into()),
            }
        });
        let gw = fast(Gateway::new(registry(), Arc::new(backend)));
        assert_eq!(gw.complete(&gw.request("echo").bind("word", "x")).unwrap().text, "ok");

        let blank = ScriptedBackend::new().with_handler(|_| Ok("   ".into()));
        let gw = fast(Gateway::new(registry(), Arc::new(blank)));
        assert!(matches!(
            gw.complete(&gw.request("echo").bind("word", "x")),
            Err(GatewayError::EmptyResponse { attempts: 3 })
        ));
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let inner = Arc::new(ScriptedBackend::new().with_handler(|p| Ok(format!("resp to {}", p.text))));
        let recorder = Arc::new(RecordingBackend::new(inner, "test"));
        let gw = Gateway::new(registry(), recorder.clone());
        let live = gw.complete(&gw.request("echo").bind("word", "a")).unwrap().text;
        let cassette = recorder.cassette();

        let replay = Arc::new(ReplayBackend::new(&cassette));
        let gw = Gateway::new(registry(), replay.clone());
        assert_eq!(gw.complete(&gw.request("echo").bind("word", "a")).unwrap().text, live);
        assert_eq!(replay.remaining(), 0);
        assert!(gw.complete(&gw.request("echo").bind("word", "a")).is_err());
    }
}
