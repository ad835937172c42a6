//! Tutoring scripts and the scenarios that chain them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Random,
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub kind: BlockKind,
    pub messages: Vec<String>,
    /// Whether the tutee reflects on this block's messages.
    #[serde(default = "yes")]
    pub reflection: bool,
}

fn yes() -> bool {
    true
}

/// Named scripts for one topic.
pub type Scripts = BTreeMap<String, Script>;

pub fn parse_scripts(text: &str) -> Result<Scripts, EvalError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| EvalError::Format {
        what: "scripts".into(),
        message: e.to_string(),
    })?;
    let mut out = Scripts::new();
    for (name, value) in table {
        // Top-level scalars such as `substitute = true` are metadata.
        if !value.is_table() {
            continue;
        }
        let script: Script = value.try_into().map_err(|e: toml::de::Error| EvalError::Format {
            what: format!("script `{name}`"),
            message: e.to_string(),
        })?;
        out.insert(name, script);
    }
    Ok(out)
}

pub fn load_scripts(path: impl AsRef<Path>) -> Result<Scripts, EvalError> {
    parse_scripts(&crate::read(path.as_ref())?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub topic: String,
    /// Seed name under the topic's seed directory, or a path.
    pub seed_state: String,
    /// Script names run in order; a checkpoint follows each.
    pub blocks: Vec<String>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        toml::from_str(&crate::read(path)?).map_err(|e| EvalError::Format {
            what: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripts_skip_metadata_and_default_reflection_on() {
        let s = parse_scripts(
            "substitute = true\n[random_1]\nkind = \"random\"\nmessages = [\"7 * 7 is 49.\"]\n\n[quiet]\nkind = \"correct\"\nmessages = []\nreflection = false\n",
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert!(s["random_1"].reflection);
        assert!(!s["quiet"].reflection);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(parse_scripts("[x]\nkind = \"chatty\"\nmessages = []\n").is_err());
    }
}
