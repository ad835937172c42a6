//! Record/replay of completions.
//!
//! A cassette is a JSON file of `(fingerprint, prompt, response)` entries in
//! call order. The fingerprint is the SHA-256 of the template name and the
//! rendered prompt, so replay is keyed on content rather than call position.
//! Identical prompts replay their recordings first-in first-out.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::backend::{Backend, BackendError, Prompt};

pub const CASSETTE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cassette {path} is malformed: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub template: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub version: u32,
    /// Free-form provenance note (model, date, backend).
    #[serde(default)]
    pub source: String,
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            version: CASSETTE_VERSION,
            source: source.into(),
            entries: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CassetteError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CassetteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cassette: Cassette =
            serde_json::from_str(&text).map_err(|e| CassetteError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if cassette.version != CASSETTE_VERSION {
            return Err(CassetteError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported version {}", cassette.version),
            });
        }
        Ok(cassette)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CassetteError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("cassette serializes");
        fs::write(path, text + "\n").map_err(|source| CassetteError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn fingerprint(template: &str, rendered: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(template.as_bytes());
    hasher.update([0u8]);
    hasher.update(rendered.as_bytes());
    hex::encode(hasher.finalize())
}

/// Serves completions from a cassette; never touches the network.
#[derive(Debug)]
pub struct ReplayBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    calls: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(cassette: &Cassette) -> Self {
        let mut queues: HashMap<String, VecDeque<String>> = HashMap::new();
        for entry in &cassette.entries {
            queues
                .entry(entry.fingerprint.clone())
                .or_default()
                .push_back(entry.response.clone());
        }
        Self {
            queues: Mutex::new(queues),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CassetteError> {
        Ok(Self::new(&Cassette::load(path)?))
    }

    /// Recordings not yet consumed.
    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .expect("replay lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = fingerprint(prompt.template, prompt.text);
        self.queues
            .lock()
            .expect("replay lock")
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                BackendError::Fatal(format!(
                    "replay miss for `{}` prompt ({})",
                    prompt.template,
                    &key[..12]
                ))
            })
    }

    fn calls(&self) -> Option<usize> {
        Some(self.calls.load(Ordering::SeqCst))
    }
}

/// Forwards to an inner backend and records every successful completion.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    cassette: Mutex<Cassette>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, source: impl Into<String>) -> Self {
        Self {
            inner,
            cassette: Mutex::new(Cassette::new(source)),
        }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CassetteError> {
        self.cassette().save(path)
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let response = self.inner.complete(prompt)?;
        self.cassette
            .lock()
            .expect("cassette lock")
            .entries
            .push(CassetteEntry {
                fingerprint: fingerprint(prompt.template, prompt.text),
                template: prompt.template.to_string(),
                prompt: prompt.text.to_string(),
                response: response.clone(),
            });
        Ok(response)
    }

    fn calls(&self) -> Option<usize> {
        self.inner.calls()
    }
}
