//! Prompt template files.
//!
//! A template file is plain text split into blocks by lines consisting of
//! exactly `---`:
//!
//! ```text
//! name: extract
//! ---
//! <instruction>
//! ---
//! <few-shot example>
//! ---
//! <query with ${placeholders}>
//! ```
//!
//! The first block is a `key: value` header and must declare `name`. The next
//! block is the instruction, the last is the query, anything between is a
//! few-shot example. `${name}` marks a placeholder; `$${` is a literal `${`.
//! Rendering joins instruction, examples and query with `\n---\n`, which is the
//! layout the prompts were written in.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const TEMPLATE_EXTENSION: &str = "tmpl";
const SEPARATOR: &str = "---";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate template name `{name}` ({first} and {second})")]
    Duplicate {
        name: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("unbound placeholder `{0}`")]
    Unbound(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    pieces: Vec<Piece>,
}

impl Block {
    fn parse(text: &str, origin: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(pos) = rest.find('$') {
            literal.push_str(&rest[..pos]);
            let after = &rest[pos..];
            if let Some(stripped) = after.strip_prefix("$${") {
                literal.push_str("${");
                rest = stripped;
            } else if let Some(stripped) = after.strip_prefix("${") {
                let end = stripped.find('}').ok_or_else(|| TemplateError::Parse {
                    path: origin.to_string(),
                    message: "unterminated `${`".into(),
                })?;
                let name = &stripped[..end];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(TemplateError::Parse {
                        path: origin.to_string(),
                        message: format!("invalid placeholder name {name:?}"),
                    });
                }
                if !literal.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(name.to_string()));
                rest = &stripped[end + 1..];
            } else {
                literal.push('$');
                rest = &after[1..];
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Ok(Self { pieces })
    }

    fn slots(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(name) => Some(name.as_str()),
            Piece::Text(_) => None,
        })
    }

    fn render(&self, bindings: &BTreeMap<String, String>, out: &mut String) -> Result<(), TemplateError> {
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(
                    bindings
                        .get(name)
                        .ok_or_else(|| TemplateError::Unbound(name.clone()))?,
                ),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    instruction: Block,
    few_shots: Vec<Block>,
    query: Option<Block>,
    placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    /// Parses template text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, TemplateError> {
        let err = |message: &str| TemplateError::Parse {
            path: origin.to_string(),
            message: message.to_string(),
        };
        let mut blocks: Vec<String> = vec![String::new()];
        for line in text.lines() {
            if line.trim_end() == SEPARATOR {
                blocks.push(String::new());
            } else {
                let cur = blocks.last_mut().expect("non-empty");
                cur.push_str(line);
                cur.push('\n');
            }
        }
        let blocks: Vec<String> = blocks
            .into_iter()
            .map(|b| b.trim_matches('\n').to_string())
            .collect();
        if blocks.len() < 2 {
            return Err(err("expected a header block and an instruction block"));
        }
        let mut name = None;
        for line in blocks[0].lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| err(&format!("bad header line {line:?}")))?;
            if key.trim() == "name" {
                name = Some(value.trim().to_string());
            }
        }
        let name = name
            .filter(|n| !n.is_empty())
            .ok_or_else(|| err("header does not declare `name`"))?;

        let mut body: Vec<Block> = blocks[1..]
            .iter()
            .map(|b| Block::parse(b, origin))
            .collect::<Result<_, _>>()?;
        let instruction = body.remove(0);
        let query = body.pop();
        let few_shots = body;

        let placeholders = std::iter::once(&instruction)
            .chain(few_shots.iter())
            .chain(query.iter())
            .flat_map(|b| b.slots().map(str::to_owned))
            .collect();
        Ok(Self {
            name,
            instruction,
            few_shots,
            query,
            placeholders,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    pub fn few_shot_count(&self) -> usize {
        self.few_shots.len()
    }

    /// Renders the prompt. Every placeholder must be bound; extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(TemplateError::Unbound(missing.clone()));
        }
        let mut out = String::new();
        self.instruction.render(bindings, &mut out)?;
        for block in self.few_shots.iter().chain(self.query.iter()) {
            out.push('\n');
            out.push_str(SEPARATOR);
            out.push('\n');
            block.render(bindings, &mut out)?;
        }
        Ok(out)
    }
}

/// Templates by name.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, (PromptTemplate, PathBuf)>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.tmpl` file in `dir` (non-recursive).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let io = |source| TemplateError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == TEMPLATE_EXTENSION))
            .collect();
        paths.sort();
        let mut registry = Self::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.clone(),
                source,
            })?;
            let template = PromptTemplate::parse(&text, &path.display().to_string())?;
            registry.insert(template, path)?;
        }
        Ok(registry)
    }

    pub fn insert(&mut self, template: PromptTemplate, source: PathBuf) -> Result<(), TemplateError> {
        if let Some((_, first)) = self.templates.get(template.name()) {
            return Err(TemplateError::Duplicate {
                name: template.name().to_string(),
                first: first.clone(),
                second: source,
            });
        }
        self.templates
            .insert(template.name().to_string(), (template, source));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&PromptTemplate> {
        self.templates.get(name).map(|(t, _)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}
