//! File-backed persistence: one directory per session holding an
//! append-only `events.jsonl` and a `runtime.json` checkpoint, plus an
//! `index.jsonl` listing every session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SessionState;
use crate::events::ConversationEvent;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: event index {found} does not follow {previous}")]
    Order { path: PathBuf, previous: u64, found: u64 },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub config: String,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("events.jsonl")
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.jsonl")
    }

    pub fn create(&self, state: &SessionState, events: &[ConversationEvent]) -> Result<(), StoreError> {
        let dir = self.dir(&state.id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        self.append(state, events)?;
        let entry = IndexEntry {
            id: state.id.clone(),
            config: state.config.clone(),
        };
        append_lines(&self.index_path(), std::slice::from_ref(&entry))
    }

    /// Appends events, then checkpoints the runtime state.
    pub fn append(&self, state: &SessionState, events: &[ConversationEvent]) -> Result<(), StoreError> {
        append_lines(&self.events_path(&state.id), events)?;
        let path = self.dir(&state.id).join("runtime.json");
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(state).expect("session state serializes");
        fs::write(&tmp, text).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>, StoreError> {
        read_lines(&self.index_path())
    }

    pub fn load_events(&self, id: &str) -> Result<Vec<ConversationEvent>, StoreError> {
        let path = self.events_path(id);
        let events: Vec<ConversationEvent> = read_lines(&path)?;
        for pair in events.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(StoreError::Order {
                    path,
                    previous: pair[0].index,
                    found: pair[1].index,
                });
            }
        }
        Ok(events)
    }

    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        let path = self.dir(id).join("runtime.json");
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let mut state: SessionState =
            serde_json::from_str(&text).map_err(|source| StoreError::Json { path, line: 1, source })?;
        state.events = self.load_events(id)?;
        // Events written after the last checkpoint are dropped from the view.
        state.events.retain(|e| e.index < state.next_index);
        Ok(state)
    }
}

fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StoreError> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))?;
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("record serializes"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}
