//! Reflection (extract → update) and response (retrieve → compose).
//!
//! Reflection folds what the tutor just taught into the knowledge state; the
//! response flow then answers only from the post-reflection state. A turn
//! always yields a reply: every stage failure degrades to "no change" or to
//! the fallback sentence, and is reported rather than raised.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conversation::{render_conversation, tail, ChatMessage};
use crate::knowledge_state::{
    diff_with_threshold, lenient, select, ChangeSet, KnowledgeState, Selection, StatementBundle,
    DEFAULT_EDIT_SIMILARITY, MAX_SELECTED,
};
use crate::llm_gateway::{names, Gateway, GatewayError};

pub const DEFAULT_FALLBACK: &str = "I'm not sure how to do that. Could you explain it to me?";
pub const NONE_MARKER: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "content", rename_all = "snake_case")]
pub enum ExtractedKnowledge {
    None,
    Content(String),
}

impl ExtractedKnowledge {
    /// Interprets an extract completion; the NONE marker is matched trimmed and case-insensitively.
    pub fn from_completion(text: &str) -> Self {
        let core = text
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace());
        if core.eq_ignore_ascii_case(NONE_MARKER) {
            ExtractedKnowledge::None
        } else {
            ExtractedKnowledge::Content(text.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub reflection_enabled: bool,
    /// Trailing messages (not turns) seen by extract, retrieve and compose.
    pub reflection_window: usize,
    pub fallback_message: String,
    /// Optional cap on total entries; an update that exceeds it is rejected.
    pub max_entries: Option<usize>,
    pub edit_similarity: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reflection_enabled: true,
            reflection_window: 3,
            fallback_message: DEFAULT_FALLBACK.to_string(),
            max_entries: None,
            edit_similarity: DEFAULT_EDIT_SIMILARITY,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.reflection_window == 0 {
            return Err("reflection_window must be at least 1".into());
        }
        if self.fallback_message.trim().is_empty() {
            return Err("fallback_message must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extract,
    Update,
    Retrieve,
    Compose,
}

/// A stage that fell back to its safe default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degradation {
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TraceRecord {
    fn note(stage: Stage, note: impl Into<String>) -> Self {
        Self {
            stage,
            prompt: None,
            completion: None,
            error: None,
            note: Some(note.into()),
        }
    }
}

pub type Trace = Vec<TraceRecord>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub state: KnowledgeState,
    pub degraded: Option<Degradation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrieveOutcome {
    pub selection: Selection,
    pub degraded: Option<Degradation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposeOutcome {
    pub reply: String,
    pub degraded: Option<Degradation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectOutcome {
    pub state: KnowledgeState,
    pub extracted: Option<ExtractedKnowledge>,
    pub degradations: Vec<Degradation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RespondOutcome {
    pub reply: String,
    pub selection: Selection,
    pub bundle: StatementBundle,
    pub degradations: Vec<Degradation>,
}

/// Knowledge and history carried between turns.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineSession {
    pub knowledge: KnowledgeState,
    pub history: Vec<ChatMessage>,
    /// Bumped whenever the knowledge state changes.
    pub version: u64,
}

impl PipelineSession {
    pub fn new(seed: KnowledgeState) -> Self {
        Self {
            knowledge: seed,
            history: Vec::new(),
            version: 0,
        }
    }

    /// Adopts the result of a turn.
    pub fn commit(&mut self, tutor_message: &str, outcome: &TurnOutcome) {
        self.history.push(ChatMessage::tutor(tutor_message));
        self.history.push(ChatMessage::tutee(outcome.reply.clone()));
        self.knowledge = outcome.state.clone();
        self.version = outcome.state_version;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub reply: String,
    pub state: KnowledgeState,
    pub changes: ChangeSet,
    pub degradations: Vec<Degradation>,
    pub trace: Trace,
    /// Version of the state after reflection.
    pub state_version: u64,
    /// Version of the state retrieval read from; always equals `state_version`.
    pub retrieved_version: u64,
    pub fallback: bool,
}

impl TurnOutcome {
    pub fn degraded(&self) -> bool {
        !self.degradations.is_empty()
    }
}

#[derive(Clone)]
pub struct Pipeline {
    gateway: Gateway,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(gateway: Gateway, config: PipelineConfig) -> Self {
        Self { gateway, config }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn call(
        &self,
        stage: Stage,
        request: &crate::llm_gateway::CompletionRequest,
        trace: &mut Trace,
    ) -> Result<String, GatewayError> {
        match self.gateway.complete(request) {
            Ok(c) => {
                trace.push(TraceRecord {
                    stage,
                    prompt: Some(c.prompt),
                    completion: Some(c.text.clone()),
                    error: None,
                    note: None,
                });
                Ok(c.text)
            }
            Err(e) => {
                trace.push(TraceRecord {
                    stage,
                    prompt: self.gateway.render(request).ok(),
                    completion: None,
                    error: Some(e.to_string()),
                    note: None,
                });
                Err(e)
            }
        }
    }

    pub fn extract(
        &self,
        recent: &[ChatMessage],
        trace: &mut Trace,
    ) -> Result<ExtractedKnowledge, Degradation> {
        if recent.is_empty() {
            return Ok(ExtractedKnowledge::None);
        }
        let request = self
            .gateway
            .request(names::EXTRACT)
            .bind("conversation", render_conversation(recent));
        match self.call(Stage::Extract, &request, trace) {
            Ok(text) => Ok(ExtractedKnowledge::from_completion(&text)),
            Err(e) => {
                tracing::warn!(error = %e, "extract failed; skipping reflection");
                Err(Degradation {
                    stage: Stage::Extract,
                    reason: e.to_string(),
                })
            }
        }
    }

    pub fn update(
        &self,
        state: &KnowledgeState,
        knowledge: &ExtractedKnowledge,
        trace: &mut Trace,
    ) -> UpdateOutcome {
        let content = match knowledge {
            ExtractedKnowledge::None => {
                return UpdateOutcome {
                    state: state.clone(),
                    degraded: None,
                }
            }
            ExtractedKnowledge::Content(c) => c,
        };
        let request = self
            .gateway
            .request(names::UPDATE)
            .bind("knowledge", state.serialize())
            .bind("new_knowledge", content.as_str());
        let mut last_error = String::new();
        for attempt in 0..2 {
            let text = match self.call(Stage::Update, &request, trace) {
                Ok(t) => t,
                Err(e) => {
                    last_error = e.to_string();
                    break;
                }
            };
            let parsed = KnowledgeState::parse_lenient(&text)
                .and_then(|s| s.check_capacity(self.config.max_entries).map(|_| s));
            match parsed {
                Ok(new_state) => {
                    return UpdateOutcome {
                        state: new_state,
                        degraded: None,
                    }
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "update produced an unusable state");
                    trace.push(TraceRecord::note(Stage::Update, format!("rejected: {e}")));
                    last_error = e.to_string();
                }
            }
        }
        UpdateOutcome {
            state: state.clone(),
            degraded: Some(Degradation {
                stage: Stage::Update,
                reason: last_error,
            }),
        }
    }

    pub fn retrieve(
        &self,
        state: &KnowledgeState,
        context: &[ChatMessage],
        trace: &mut Trace,
    ) -> RetrieveOutcome {
        if state.is_empty() {
            return RetrieveOutcome {
                selection: Selection::empty(),
                degraded: None,
            };
        }
        let request = self
            .gateway
            .request(names::RETRIEVE)
            .bind("conversation", render_conversation(context))
            .bind("knowledge", state.serialize());
        let mut last_error = String::new();
        for _ in 0..2 {
            let text = match self.call(Stage::Retrieve, &request, trace) {
                Ok(t) => t,
                Err(e) => {
                    last_error = e.to_string();
                    break;
                }
            };
            match parse_selection_answer(&text) {
                Some((facts, code)) => {
                    let (facts, dropped_f) = keep_in_range(facts, state.facts().len());
                    let (code, dropped_c) = keep_in_range(code, state.code_implementation().len());
                    if dropped_f + dropped_c > 0 {
                        tracing::info!(dropped = dropped_f + dropped_c, "dropped out-of-range retrieve indexes");
                        trace.push(TraceRecord::note(
                            Stage::Retrieve,
                            format!("dropped {} out-of-range index(es)", dropped_f + dropped_c),
                        ));
                    }
                    let selection = Selection::new(facts, code)
                        .expect("indexes are deduplicated and capped");
                    return RetrieveOutcome {
                        selection,
                        degraded: None,
                    };
                }
                None => {
                    last_error = format!("unparseable selection: {}", text.trim());
                    trace.push(TraceRecord::note(Stage::Retrieve, "unparseable selection"));
                }
            }
        }
        RetrieveOutcome {
            selection: Selection::empty(),
            degraded: Some(Degradation {
                stage: Stage::Retrieve,
                reason: last_error,
            }),
        }
    }

    pub fn compose(
        &self,
        bundle: &StatementBundle,
        context: &[ChatMessage],
        trace: &mut Trace,
    ) -> ComposeOutcome {
        if bundle.is_empty() {
            return ComposeOutcome {
                reply: self.config.fallback_message.clone(),
                degraded: None,
            };
        }
        let request = self
            .gateway
            .request(names::COMPOSE)
            .bind("conversation", render_conversation(context))
            .bind("statement", render_statement(bundle));
        let mut reply = None;
        for attempt in 0..2 {
            match self.call(Stage::Compose, &request, trace) {
                Ok(text) => {
                    let missing = missing_snippets(&text, &bundle.code_implementation);
                    if missing.is_empty() {
                        return ComposeOutcome {
                            reply: text,
                            degraded: None,
                        };
                    }
                    tracing::info!(attempt, missing = missing.len(), "reply lacks fenced snippet");
                    trace.push(TraceRecord::note(
                        Stage::Compose,
                        format!("{} snippet(s) missing from code fences", missing.len()),
                    ));
                    reply = Some(text);
                }
                Err(e) => {
                    return ComposeOutcome {
                        reply: self.config.fallback_message.clone(),
                        degraded: Some(Degradation {
                            stage: Stage::Compose,
                            reason: e.to_string(),
                        }),
                    }
                }
            }
        }
        let mut reply = reply.expect("at least one completion");
        for snippet in missing_snippets(&reply, &bundle.code_implementation) {
            reply.push_str("\n\n");
            reply.push_str(&fence(&snippet));
        }
        ComposeOutcome {
            reply,
            degraded: None,
        }
    }

    /// Extract then update over the trailing window of `history`.
    pub fn reflect(
        &self,
        state: &KnowledgeState,
        history: &[ChatMessage],
        trace: &mut Trace,
    ) -> ReflectOutcome {
        let window = tail(history, self.config.reflection_window);
        match self.extract(window, trace) {
            Ok(extracted) => {
                let update = self.update(state, &extracted, trace);
                ReflectOutcome {
                    state: update.state,
                    extracted: Some(extracted),
                    degradations: update.degraded.into_iter().collect(),
                }
            }
            Err(d) => ReflectOutcome {
                state: state.clone(),
                extracted: None,
                degradations: vec![d],
            },
        }
    }

    /// Retrieve, select and compose against `state`.
    pub fn respond(
        &self,
        state: &KnowledgeState,
        history: &[ChatMessage],
        trace: &mut Trace,
    ) -> RespondOutcome {
        let context = tail(history, self.config.reflection_window);
        let retrieved = self.retrieve(state, context, trace);
        let bundle = select(state, &retrieved.selection).expect("retrieve keeps indexes in range");
        let composed = self.compose(&bundle, context, trace);
        RespondOutcome {
            reply: composed.reply,
            selection: retrieved.selection,
            bundle,
            degradations: retrieved
                .degraded
                .into_iter()
                .chain(composed.degraded)
                .collect(),
        }
    }

    /// One full turn: reflection (when enabled) strictly before response.
    pub fn step(&self, session: &PipelineSession, tutor_message: &str) -> TurnOutcome {
        let mut trace = Trace::new();
        let mut history = session.history.clone();
        history.push(ChatMessage::tutor(tutor_message));

        let old = &session.knowledge;
        let mut degradations = Vec::new();
        let (state, state_version) = if self.config.reflection_enabled {
            let reflected = self.reflect(old, &history, &mut trace);
            degradations.extend(reflected.degradations);
            let version = session.version + u64::from(reflected.state != *old);
            (reflected.state, version)
        } else {
            (old.clone(), session.version)
        };

        let retrieved_version = state_version;
        let response = self.respond(&state, &history, &mut trace);
        degradations.extend(response.degradations);
        let fallback = response.bundle.is_empty() || response.reply == self.config.fallback_message;
        TurnOutcome {
            changes: diff_with_threshold(old, &state, self.config.edit_similarity),
            reply: response.reply,
            state,
            degradations,
            trace,
            state_version,
            retrieved_version,
            fallback,
        }
    }
}

/// Parses a retrieve answer into raw index lists; missing keys count as empty.
pub fn parse_selection_answer(text: &str) -> Option<(Vec<usize>, Vec<usize>)> {
    let object = lenient::extract_object(text)?;
    let value: Value = serde_json::from_str(&lenient::strip_trailing_commas(object)).ok()?;
    let object = value.as_object()?;
    let read = |key: &str| -> Option<Vec<usize>> {
        match object.get(key) {
            None | Some(Value::Null) => Some(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Number(n) => n.as_u64().map(|n| n as usize),
                    Value::String(s) => s.trim().parse().ok(),
                    _ => None,
                })
                .collect(),
            Some(_) => None,
        }
    };
    Some((read("facts")?, read("code_implementation")?))
}

fn keep_in_range(indexes: Vec<usize>, len: usize) -> (Vec<usize>, usize) {
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = 0;
    for i in indexes {
        if i >= len {
            dropped += 1;
        } else if !kept.contains(&i) {
            kept.push(i);
        }
    }
    kept.truncate(MAX_SELECTED);
    (kept, dropped)
}

/// The STATEMENT text handed to compose: facts first, then each snippet fenced.
pub fn render_statement(bundle: &StatementBundle) -> String {
    let mut parts: Vec<String> = Vec::new();
    if !bundle.facts.is_empty() {
        parts.push(bundle.facts.join(" "));
    }
    parts.extend(bundle.code_implementation.iter().map(|s| fence(s)));
    parts.join("\n")
}

/// Wraps a snippet in a code fence unless it already is one.
pub fn fence(snippet: &str) -> String {
    let trimmed = snippet.trim();
    if trimmed.starts_with("```") && trimmed.ends_with("```") && trimmed.len() > 6 {
        trimmed.to_string()
    } else {
        format!("```python\n{trimmed}\n```")
    }
}

/// Code inside a snippet, without any surrounding fence or language tag.
pub fn snippet_body(snippet: &str) -> String {
    let trimmed = snippet.trim();
    let Some(inner) = trimmed
        .strip_prefix("```")
        .and_then(|s| s.strip_suffix("```"))
    else {
        return trimmed.to_string();
    };
    // a language tag is the leading word when it is followed by a newline or space
    let inner = match inner.find(|c: char| c.is_whitespace()) {
        Some(pos)
            if pos > 0
                && inner[..pos]
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '+' || c == '#') =>
        {
            &inner[pos..]
        }
        _ => inner,
    };
    inner.trim().to_string()
}

/// Contents of every fenced block in `text`, language tags removed.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(end) = after.find("```") else { break };
        blocks.push(snippet_body(&format!("```{}```", &after[..end])));
        rest = &after[end + 3..];
    }
    blocks
}

/// Snippets whose body does not occur inside any fenced block of `reply`.
pub fn missing_snippets(reply: &str, snippets: &[String]) -> Vec<String> {
    let blocks = fenced_blocks(reply);
    snippets
        .iter()
        .filter(|s| {
            let body = snippet_body(s);
            !blocks.iter().any(|b| b.contains(&body))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    turn: u64,
    records: &'a [TraceRecord],
}

/// Append-only JSON-lines log of per-turn traces.
pub struct TraceLog {
    out: Mutex<BufWriter<File>>,
}

impl TraceLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, turn: u64, records: &[TraceRecord]) -> std::io::Result<()> {
        let line = serde_json::to_string(&TraceLine { turn, records }).expect("trace serializes");
        let mut out = self.out.lock().expect("trace lock");
        writeln!(out, "{line}")?;
        out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_marker_is_trimmed_and_case_insensitive() {
        for text in ["NONE", " none\n", "\"None\"", "NONE."] {
            assert_eq!(ExtractedKnowledge::from_completion(text), ExtractedKnowledge::None);
        }
        assert!(matches!(
            ExtractedKnowledge::from_completion("None of the loops terminate."),
            ExtractedKnowledge::Content(_)
        ));
    }

    #[test]
    fn selection_answers_parse_leniently() {
        assert_eq!(
            parse_selection_answer("ANSWER: { \"facts\": [0], \"code_implementation\": [0], }"),
            Some((vec![0], vec![0]))
        );
        assert_eq!(parse_selection_answer("{\"facts\": [2, \"1\"]}"), Some((vec![2, 1], vec![])));
        assert_eq!(parse_selection_answer("no idea"), None);
        assert_eq!(parse_selection_answer("{\"facts\": \"zero\"}"), None);
    }

    #[test]
    fn out_of_range_indexes_are_dropped_and_capped() {
        assert_eq!(keep_in_range(vec![4, 0, 0, 9, 1, 2, 3], 5), (vec![4, 0, 1], 1));
    }

    #[test]
    fn snippet_bodies_and_fences() {
        assert_eq!(snippet_body("```python while x: pass```"), "while x: pass");
        assert_eq!(snippet_body("```python3\nfor i in a:\n    s += i\n```"), "for i in a:\n    s += i");
        assert_eq!(snippet_body("x = 1"), "x = 1");
        assert_eq!(fence("x = 1"), "```python\nx = 1\n```");
        let reply = "Here:\n```python\nlow = mid + 1\n```\nand ```python high = mid - 1```";
        assert_eq!(fenced_blocks(reply), ["low = mid + 1", "high = mid - 1"]);
        assert!(missing_snippets(reply, &["low = mid + 1".into()]).is_empty());
        assert_eq!(missing_snippets("low = mid + 1", &["low = mid + 1".into()]).len(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            reflection_window: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
