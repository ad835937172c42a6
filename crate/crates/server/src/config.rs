//! Session configuration and problem files. Relative paths resolve against
//! the directory of the file that names them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tutee_core::knowledge_state::KnowledgeState;
use tutee_core::llm_gateway::{RequestDefaults, TemplateRegistry};
use tutee_core::mode_shifting::ModeConfig;
use tutee_core::reflect_respond::PipelineConfig;
use tutee_core::teaching_helper::HelperConfig;

use crate::sandbox::SandboxConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("unknown session config `{0}`")]
    UnknownConfig(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(path: &Path, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Features {
    pub mode_shifting: bool,
    pub teaching_helper: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            mode_shifting: true,
            teaching_helper: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Prompted,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub context_window: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Prompted,
            context_window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub profile: String,
}

/// The session config file as written.
#[derive(Debug, Clone, Deserialize)]
struct RawSessionConfig {
    name: String,
    topic: String,
    concept: String,
    problem: PathBuf,
    seed_state: PathBuf,
    templates: PathBuf,
    objectives: Vec<String>,
    persona: Persona,
    #[serde(default)]
    features: Features,
    #[serde(default)]
    classifier: ClassifierConfig,
    #[serde(default)]
    pipeline: PipelineConfig,
    #[serde(default)]
    gateway: RequestDefaults,
    #[serde(default)]
    mode: ModeConfig,
    #[serde(default)]
    helper: HelperConfig,
    #[serde(default)]
    sandbox: SandboxConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected: String,
}

#[derive(Debug, Clone, Deserialize)]
struct RawProblem {
    id: String,
    topic: String,
    title: String,
    statement: String,
    starter_code: String,
    harness: PathBuf,
    tests: PathBuf,
    #[serde(default)]
    reference: Option<PathBuf>,
    #[serde(default)]
    time_limit_ms: Option<u64>,
    #[serde(default)]
    memory_limit_mb: Option<u64>,
}

pub const CODE_SLOT: &str = "${code}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Problem {
    pub id: String,
    pub topic: String,
    pub title: String,
    pub statement: String,
    pub starter_code: String,
    /// Program text with a `${code}` slot for the tutee's code.
    pub harness: String,
    pub tests: Vec<TestCase>,
    #[serde(skip)]
    pub reference: Option<String>,
    pub time_limit: Option<Duration>,
    pub memory_limit_mb: Option<u64>,
}

impl Problem {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw: RawProblem = toml::from_str(&read(path)?).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let harness = read(&base.join(&raw.harness))?;
        if !harness.contains(CODE_SLOT) {
            return Err(invalid(path, "harness has no ${code} slot"));
        }
        let tests_path = base.join(&raw.tests);
        let tests: Vec<TestCase> =
            serde_json::from_str(&read(&tests_path)?).map_err(|e| invalid(&tests_path, e))?;
        if tests.is_empty() {
            return Err(invalid(path, "a problem needs at least one test case"));
        }
        let reference = raw
            .reference
            .map(|r| read(&base.join(r)))
            .transpose()?;
        Ok(Self {
            id: raw.id,
            topic: raw.topic,
            title: raw.title,
            statement: raw.statement.trim().to_string(),
            starter_code: raw.starter_code.trim_matches('\n').to_string(),
            harness,
            tests,
            reference,
            time_limit: raw.time_limit_ms.map(Duration::from_millis),
            memory_limit_mb: raw.memory_limit_mb,
        })
    }

    /// Inserts `code` into the harness.
    pub fn assemble(&self, code: &str) -> String {
        self.harness.replacen(CODE_SLOT, code.trim_end(), 1)
    }
}

/// A session config with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub name: String,
    pub topic: String,
    pub concept: String,
    pub objectives: Vec<String>,
    pub persona: Persona,
    pub features: Features,
    pub classifier: ClassifierConfig,
    pub pipeline: PipelineConfig,
    pub gateway: RequestDefaults,
    pub mode: ModeConfig,
    pub helper: HelperConfig,
    pub sandbox: SandboxConfig,
    pub problem: Problem,
    pub seed_state: KnowledgeState,
    pub templates: TemplateRegistry,
}

impl SessionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw: RawSessionConfig = toml::from_str(&read(path)?).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if raw.objectives.len() != 3 {
            return Err(invalid(path, "exactly three objectives are expected"));
        }
        raw.pipeline.validate().map_err(|e| invalid(path, e))?;
        raw.mode.validate().map_err(|e| invalid(path, e))?;
        if raw.features.teaching_helper {
            raw.helper.validate().map_err(|e| invalid(path, e))?;
        }
        let seed_path = base.join(&raw.seed_state);
        let seed_state =
            KnowledgeState::parse(&read(&seed_path)?).map_err(|e| invalid(&seed_path, e))?;
        let templates_dir = base.join(&raw.templates);
        let templates =
            TemplateRegistry::load_dir(&templates_dir).map_err(|e| invalid(&templates_dir, e))?;
        let mut problem = Problem::load(base.join(&raw.problem))?;
        if problem.topic != raw.topic {
            return Err(invalid(path, format!("problem topic `{}` does not match `{}`", problem.topic, raw.topic)));
        }
        let mut sandbox = raw.sandbox;
        if let Some(limit) = problem.time_limit.take() {
            sandbox.time_limit = limit;
        }
        if let Some(mb) = problem.memory_limit_mb {
            sandbox.memory_limit_mb = mb;
        }
        Ok(Self {
            name: raw.name,
            topic: raw.topic,
            concept: raw.concept,
            objectives: raw.objectives,
            persona: raw.persona,
            features: raw.features,
            classifier: raw.classifier,
            pipeline: raw.pipeline,
            gateway: raw.gateway,
            mode: raw.mode,
            helper: raw.helper,
            sandbox,
            problem,
            seed_state,
            templates,
        })
    }

    /// Loads every `*.toml` in `dir`, keyed by config name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, SessionConfig>, ConfigError> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|source| ConfigError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut out = BTreeMap::new();
        for p in paths {
            let cfg = Self::load(&p)?;
            if out.contains_key(&cfg.name) {
                return Err(invalid(&p, format!("duplicate config name `{}`", cfg.name)));
            }
            out.insert(cfg.name.clone(), cfg);
        }
        Ok(out)
    }
}
