//! The tutee's knowledge state: an ordered list of natural-language facts and
//! an ordered list of code snippets.
//!
//! Everything the tutee can say is drawn from this store, so the module keeps
//! it strict: entries are non-empty, unique within a field, and the serialized
//! form is canonical so that byte equality and value equality coincide.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const FACTS_KEY: &str = "facts";
pub const CODE_KEY: &str = "code_implementation";

/// Maximum number of indexes a [`Selection`] may carry per field.
pub const MAX_SELECTED: usize = 3;

/// Default Jaccard threshold above which a removed/added pair is reported as an edit.
pub const DEFAULT_EDIT_SIMILARITY: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("malformed knowledge state: {0}")]
    Malformed(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("unexpected key `{0}`")]
    ExtraKey(String),
    #[error("entry {index} of `{field}` is not a string")]
    NonStringEntry { field: &'static str, index: usize },
    #[error("entry {index} of `{field}` is empty")]
    EmptyEntry { field: &'static str, index: usize },
    #[error("duplicate entry in `{field}`: {entry:?}")]
    DuplicateEntry { field: &'static str, entry: String },
    #[error("knowledge state holds {count} entries, capacity is {max}")]
    OverCapacity { count: usize, max: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("selection holds {count} `{field}` indexes, at most {MAX_SELECTED} allowed")]
    TooMany { field: &'static str, count: usize },
    #[error("`{field}` index {index} out of range for {len} entries")]
    OutOfRange {
        field: &'static str,
        index: usize,
        len: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("change set does not apply: {0}")]
pub struct ApplyError(String);

/// Which of the two fields an entry lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Facts,
    CodeImplementation,
}

impl Field {
    pub fn key(self) -> &'static str {
        match self {
            Field::Facts => FACTS_KEY,
            Field::CodeImplementation => CODE_KEY,
        }
    }
}

/// The tutee's entire knowledge. Immutable once built; updates produce new values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct KnowledgeState {
    facts: Vec<String>,
    code_implementation: Vec<String>,
}

impl KnowledgeState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a state, rejecting empty and duplicate entries.
    pub fn new(facts: Vec<String>, code_implementation: Vec<String>) -> Result<Self, StateError> {
        check_field(Field::Facts, &facts)?;
        check_field(Field::CodeImplementation, &code_implementation)?;
        Ok(Self {
            facts,
            code_implementation,
        })
    }

    /// Builds a state, dropping repeated entries (first occurrence wins).
    /// Empty entries are still an error.
    pub fn new_dedup(facts: Vec<String>, code_implementation: Vec<String>) -> Result<Self, StateError> {
        Self::new(dedup(facts), dedup(code_implementation))
    }

    pub fn facts(&self) -> &[String] {
        &self.facts
    }

    pub fn code_implementation(&self) -> &[String] {
        &self.code_implementation
    }

    pub fn field(&self, field: Field) -> &[String] {
        match field {
            Field::Facts => &self.facts,
            Field::CodeImplementation => &self.code_implementation,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.code_implementation.is_empty()
    }

    pub fn len(&self) -> usize {
        self.facts.len() + self.code_implementation.len()
    }

    /// Errors when the state exceeds an optional entry cap.
    pub fn check_capacity(&self, max_entries: Option<usize>) -> Result<(), StateError> {
        match max_entries {
            Some(max) if self.len() > max => Err(StateError::OverCapacity {
                count: self.len(),
                max,
            }),
            _ => Ok(()),
        }
    }

    /// Strict parse of the two-key object form.
    pub fn parse(text: &str) -> Result<Self, StateError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| StateError::Malformed(e.to_string()))?;
        Self::from_value(&value, false)
    }

    /// Parses model output: tolerates surrounding prose, code fences, trailing
    /// commas and repeated entries. Structural problems are still errors.
    pub fn parse_lenient(text: &str) -> Result<Self, StateError> {
        let object = lenient::extract_object(text)
            .ok_or_else(|| StateError::Malformed("no JSON object found".into()))?;
        let cleaned = lenient::strip_trailing_commas(object);
        let value: Value =
            serde_json::from_str(&cleaned).map_err(|e| StateError::Malformed(e.to_string()))?;
        Self::from_value(&value, true)
    }

    fn from_value(value: &Value, dedupe: bool) -> Result<Self, StateError> {
        let object = value
            .as_object()
            .ok_or_else(|| StateError::Malformed("expected an object".into()))?;
        if let Some(extra) = object.keys().find(|k| *k != FACTS_KEY && *k != CODE_KEY) {
            return Err(StateError::ExtraKey(extra.clone()));
        }
        let facts = read_field(object, Field::Facts)?;
        let code = read_field(object, Field::CodeImplementation)?;
        if dedupe {
            Self::new_dedup(facts, code)
        } else {
            Self::new(facts, code)
        }
    }

    /// Canonical text form: fixed key order, `", "` separators, no other whitespace.
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(64 + self.len() * 48);
        out.push_str("{\"facts\": ");
        write_list(&mut out, &self.facts);
        out.push_str(", \"code_implementation\": ");
        write_list(&mut out, &self.code_implementation);
        out.push('}');
        out
    }
}

impl fmt::Display for KnowledgeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl Serialize for KnowledgeState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("KnowledgeState", 2)?;
        s.serialize_field(FACTS_KEY, &self.facts)?;
        s.serialize_field(CODE_KEY, &self.code_implementation)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for KnowledgeState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Self::from_value(&value, false).map_err(serde::de::Error::custom)
    }
}

fn write_list(out: &mut String, entries: &[String]) {
    out.push('[');
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        // serializing a &str cannot fail
        out.push_str(&serde_json::to_string(entry).expect("string serialization"));
    }
    out.push(']');
}

fn read_field(
    object: &serde_json::Map<String, Value>,
    field: Field,
) -> Result<Vec<String>, StateError> {
    let key = field.key();
    let list = object
        .get(key)
        .ok_or(StateError::MissingKey(key))?
        .as_array()
        .ok_or_else(|| StateError::Malformed(format!("`{key}` is not a list")))?;
    list.iter()
        .enumerate()
        .map(|(index, v)| {
            v.as_str()
                .map(str::to_owned)
                .ok_or(StateError::NonStringEntry { field: key, index })
        })
        .collect()
}

fn check_field(field: Field, entries: &[String]) -> Result<(), StateError> {
    let mut seen = HashSet::with_capacity(entries.len());
    for (index, entry) in entries.iter().enumerate() {
        if entry.trim().is_empty() {
            return Err(StateError::EmptyEntry {
                field: field.key(),
                index,
            });
        }
        if !seen.insert(entry.as_str()) {
            return Err(StateError::DuplicateEntry {
                field: field.key(),
                entry: entry.clone(),
            });
        }
    }
    Ok(())
}

fn dedup(entries: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::with_capacity(entries.len());
    entries
        .into_iter()
        .filter(|e| seen.insert(e.clone()))
        .collect()
}

/// Indexes into a knowledge state chosen by retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Selection {
    facts: Vec<usize>,
    code_implementation: Vec<usize>,
}

impl Selection {
    /// Rejects more than [`MAX_SELECTED`] indexes per field. Repeated indexes
    /// are collapsed and the result is kept in ascending order.
    pub fn new(facts: Vec<usize>, code_implementation: Vec<usize>) -> Result<Self, SelectionError> {
        let facts = sorted_unique(facts);
        let code_implementation = sorted_unique(code_implementation);
        if facts.len() > MAX_SELECTED {
            return Err(SelectionError::TooMany {
                field: FACTS_KEY,
                count: facts.len(),
            });
        }
        if code_implementation.len() > MAX_SELECTED {
            return Err(SelectionError::TooMany {
                field: CODE_KEY,
                count: code_implementation.len(),
            });
        }
        Ok(Self {
            facts,
            code_implementation,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn facts(&self) -> &[usize] {
        &self.facts
    }

    pub fn code_implementation(&self) -> &[usize] {
        &self.code_implementation
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.code_implementation.is_empty()
    }

    /// Checks every index against `state`.
    pub fn validate(&self, state: &KnowledgeState) -> Result<(), SelectionError> {
        for (field, idx) in [
            (Field::Facts, &self.facts),
            (Field::CodeImplementation, &self.code_implementation),
        ] {
            let len = state.field(field).len();
            if let Some(&index) = idx.iter().find(|&&i| i >= len) {
                return Err(SelectionError::OutOfRange {
                    field: field.key(),
                    index,
                    len,
                });
            }
        }
        Ok(())
    }
}

fn sorted_unique(v: Vec<usize>) -> Vec<usize> {
    v.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Selected statements and snippets, in knowledge-state order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatementBundle {
    pub facts: Vec<String>,
    pub code_implementation: Vec<String>,
}

impl StatementBundle {
    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.code_implementation.is_empty()
    }
}

pub fn select(state: &KnowledgeState, sel: &Selection) -> Result<StatementBundle, SelectionError> {
    sel.validate(state)?;
    Ok(StatementBundle {
        facts: sel.facts.iter().map(|&i| state.facts[i].clone()).collect(),
        code_implementation: sel
            .code_implementation
            .iter()
            .map(|&i| state.code_implementation[i].clone())
            .collect(),
    })
}

/// An entry whose text changed between two states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub old_index: usize,
    pub new_index: usize,
    pub old: String,
    pub new: String,
}

/// Differences within one field. Indexes refer to the old list for
/// `removed`, to the new list for `added`, and to both for `retained`/`edited`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldChanges {
    pub added: Vec<(usize, String)>,
    pub edited: Vec<Edit>,
    pub removed: Vec<(usize, String)>,
    /// Unchanged entries as `(old_index, new_index)`.
    pub retained: Vec<(usize, usize)>,
}

impl FieldChanges {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.edited.is_empty()
            && self.removed.is_empty()
            && self.retained.iter().all(|(o, n)| o == n)
    }

    fn apply(&self, old: &[String]) -> Result<Vec<String>, ApplyError> {
        let len = self.retained.len() + self.edited.len() + self.added.len();
        let consumed = self.retained.len() + self.edited.len() + self.removed.len();
        if consumed != old.len() {
            return Err(ApplyError(format!(
                "change set covers {consumed} old entries, state has {}",
                old.len()
            )));
        }
        let mut slots: Vec<Option<String>> = vec![None; len];
        let mut place = |idx: usize, text: String| -> Result<(), ApplyError> {
            match slots.get_mut(idx) {
                Some(slot @ None) => {
                    *slot = Some(text);
                    Ok(())
                }
                Some(Some(_)) => Err(ApplyError(format!("new index {idx} filled twice"))),
                None => Err(ApplyError(format!("new index {idx} out of range"))),
            }
        };
        let old_at = |idx: usize| {
            old.get(idx)
                .ok_or_else(|| ApplyError(format!("old index {idx} out of range")))
        };
        for &(o, n) in &self.retained {
            place(n, old_at(o)?.clone())?;
        }
        for edit in &self.edited {
            if old_at(edit.old_index)? != &edit.old {
                return Err(ApplyError(format!("old entry {} mismatch", edit.old_index)));
            }
            place(edit.new_index, edit.new.clone())?;
        }
        for (n, text) in &self.added {
            place(*n, text.clone())?;
        }
        for (o, text) in &self.removed {
            if old_at(*o)? != text {
                return Err(ApplyError(format!("removed entry {o} mismatch")));
            }
        }
        slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ApplyError("unfilled position in new list".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChangeSet {
    pub facts: FieldChanges,
    pub code_implementation: FieldChanges,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.code_implementation.is_empty()
    }

    pub fn apply(&self, old: &KnowledgeState) -> Result<KnowledgeState, ApplyError> {
        let facts = self.facts.apply(&old.facts)?;
        let code = self.code_implementation.apply(&old.code_implementation)?;
        KnowledgeState::new(facts, code).map_err(|e| ApplyError(e.to_string()))
    }
}

/// Lowercased whitespace tokens with surrounding punctuation trimmed.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

pub fn diff(old: &KnowledgeState, new: &KnowledgeState) -> ChangeSet {
    diff_with_threshold(old, new, DEFAULT_EDIT_SIMILARITY)
}

/// Exact matches are retained; of the rest, pairs are greedily matched as edits
/// by descending token similarity while it stays at or above `threshold`.
pub fn diff_with_threshold(old: &KnowledgeState, new: &KnowledgeState, threshold: f64) -> ChangeSet {
    ChangeSet {
        facts: diff_field(&old.facts, &new.facts, threshold),
        code_implementation: diff_field(&old.code_implementation, &new.code_implementation, threshold),
    }
}

fn diff_field(old: &[String], new: &[String], threshold: f64) -> FieldChanges {
    let mut changes = FieldChanges::default();
    let mut old_used = vec![false; old.len()];
    let mut new_used = vec![false; new.len()];

    for (n, entry) in new.iter().enumerate() {
        if let Some(o) = old.iter().position(|e| e == entry) {
            old_used[o] = true;
            new_used[n] = true;
            changes.retained.push((o, n));
        }
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (o, old_entry) in old.iter().enumerate().filter(|(o, _)| !old_used[*o]) {
        for (n, new_entry) in new.iter().enumerate().filter(|(n, _)| !new_used[*n]) {
            let sim = jaccard(old_entry, new_entry);
            if sim >= threshold {
                candidates.push((sim, o, n));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for (_, o, n) in candidates {
        if old_used[o] || new_used[n] {
            continue;
        }
        old_used[o] = true;
        new_used[n] = true;
        changes.edited.push(Edit {
            old_index: o,
            new_index: n,
            old: old[o].clone(),
            new: new[n].clone(),
        });
    }
    changes.edited.sort_by_key(|e| e.new_index);

    changes.removed = old
        .iter()
        .enumerate()
        .filter(|(o, _)| !old_used[*o])
        .map(|(o, e)| (o, e.clone()))
        .collect();
    changes.added = new
        .iter()
        .enumerate()
        .filter(|(n, _)| !new_used[*n])
        .map(|(n, e)| (n, e.clone()))
        .collect();
    changes
}

/// Recovery helpers for JSON emitted by a language model.
pub(crate) mod lenient {
    /// Returns the first balanced `{ ... }` region, skipping braces inside strings.
    pub fn extract_object(text: &str) -> Option<&str> {
        let start = text.find('{')?;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, c) in text[start..].char_indices() {
            if in_string {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_string = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..start + i + 1]);
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// Drops commas that directly precede `]` or `}` (outside strings).
    pub fn strip_trailing_commas(json: &str) -> String {
        let chars: Vec<char> = json.chars().collect();
        let mut out = String::with_capacity(json.len());
        let mut in_string = false;
        let mut escaped = false;
        for (i, &c) in chars.iter().enumerate() {
            if in_string {
                out.push(c);
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            if c == '"' {
                in_string = true;
            }
            if c == ',' {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if matches!(next, Some(']') | Some('}')) {
                    continue;
                }
            }
            out.push(c);
        }
        out
    }
}
