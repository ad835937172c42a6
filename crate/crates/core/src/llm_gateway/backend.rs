use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

/// A fully rendered prompt handed to a backend.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub template: &'a str,
    pub bindings: &'a BTreeMap<String, String>,
    pub text: &'a str,
    pub temperature: f64,
    pub timeout: Duration,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection resets, rate limits, 5xx.
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    /// Not worth retrying: bad request, missing fixture, replay miss.
    #[error("provider error: {0}")]
    Fatal(String),
}

/// A text-completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError>;

    /// Number of completions served so far, if the backend tracks it.
    fn calls(&self) -> Option<usize> {
        None
    }
}

type Handler = dyn Fn(&Prompt<'_>) -> Result<String, BackendError> + Send + Sync;

/// Returns fixtures keyed by rendered prompt text. Prompts without a fixture
/// go to the optional handler, or fail.
#[derive(Default)]
pub struct ScriptedBackend {
    fixtures: HashMap<String, String>,
    handler: Option<Box<Handler>>,
    calls: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, rendered: impl Into<String>, response: impl Into<String>) -> Self {
        self.fixtures.insert(rendered.into(), response.into());
        self
    }

    pub fn with_handler<F>(mut self, handler: F) -> Self
    where
        F: Fn(&Prompt<'_>) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.handler = Some(Box::new(handler));
        self
    }

    /// Template names of every prompt served, in order.
    pub fn served_templates(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("log lock")
            .push(prompt.template.to_string());
        if let Some(response) = self.fixtures.get(prompt.text) {
            return Ok(response.clone());
        }
        match &self.handler {
            Some(handler) => handler(prompt),
            None => Err(BackendError::Fatal(format!(
                "no fixture for `{}` prompt",
                prompt.template
            ))),
        }
    }

    fn calls(&self) -> Option<usize> {
        Some(self.calls.load(Ordering::SeqCst))
    }
}

/// Always fails; stands in for an unreachable provider.
#[derive(Debug, Default)]
pub struct FailingBackend {
    calls: AtomicUsize,
    pub transient: bool,
}

impl FailingBackend {
    pub fn transient() -> Self {
        Self {
            calls: AtomicUsize::new(0),
            transient: true,
        }
    }
}

impl Backend for FailingBackend {
    fn complete(&self, _prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.transient {
            Err(BackendError::Transient("backend unavailable".into()))
        } else {
            Err(BackendError::Fatal("backend unavailable".into()))
        }
    }

    fn calls(&self) -> Option<usize> {
        Some(self.calls.load(Ordering::SeqCst))
    }
}
