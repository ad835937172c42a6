//! Message-type vocabulary for tutoring dialogues, classifiers, and
//! knowledge-building density analytics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::conversation::{render_conversation, tail, ChatMessage, Phase, Role};
use crate::llm_gateway::{names, Gateway};

pub const DEFAULT_CONTEXT_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Instruction,
    Prompting,
    Statement,
    Miscellaneous,
}

impl Category {
    /// Lower wins when a message mixes categories.
    pub fn priority(self) -> u8 {
        match self {
            Category::Instruction => 0,
            Category::Prompting => 1,
            Category::Statement => 2,
            Category::Miscellaneous => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageType {
    InstructionFixing,
    InstructionCommanding,
    InstructionEncouraging,
    PromptingChallengeFinding,
    PromptingHinting,
    PromptingChecking,
    PromptingThoughtProvoking,
    PromptingAskingForHelp,
    StatementComprehension,
    StatementElaboration,
    StatementSenseMaking,
    StatementAcceptingReject,
    StatementFeedback,
    Miscellaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeClass {
    Telling,
    Building,
    Other,
}

impl MessageType {
    pub const ALL: [MessageType; 14] = [
        MessageType::InstructionFixing,
        MessageType::InstructionCommanding,
        MessageType::InstructionEncouraging,
        MessageType::PromptingChallengeFinding,
        MessageType::PromptingHinting,
        MessageType::PromptingChecking,
        MessageType::PromptingThoughtProvoking,
        MessageType::PromptingAskingForHelp,
        MessageType::StatementComprehension,
        MessageType::StatementElaboration,
        MessageType::StatementSenseMaking,
        MessageType::StatementAcceptingReject,
        MessageType::StatementFeedback,
        MessageType::Miscellaneous,
    ];

    /// Every type except Miscellaneous.
    pub const SUBCATEGORIES: [MessageType; 13] = [
        MessageType::InstructionFixing,
        MessageType::InstructionCommanding,
        MessageType::InstructionEncouraging,
        MessageType::PromptingChallengeFinding,
        MessageType::PromptingHinting,
        MessageType::PromptingChecking,
        MessageType::PromptingThoughtProvoking,
        MessageType::PromptingAskingForHelp,
        MessageType::StatementComprehension,
        MessageType::StatementElaboration,
        MessageType::StatementSenseMaking,
        MessageType::StatementAcceptingReject,
        MessageType::StatementFeedback,
    ];

    pub fn category(self) -> Category {
        use MessageType::*;
        match self {
            InstructionFixing | InstructionCommanding | InstructionEncouraging => {
                Category::Instruction
            }
            PromptingChallengeFinding | PromptingHinting | PromptingChecking
            | PromptingThoughtProvoking | PromptingAskingForHelp => Category::Prompting,
            StatementComprehension | StatementElaboration | StatementSenseMaking
            | StatementAcceptingReject | StatementFeedback => Category::Statement,
            Miscellaneous => Category::Miscellaneous,
        }
    }

    pub fn label(self) -> &'static str {
        use MessageType::*;
        match self {
            InstructionFixing => "Instruction-Fixing",
            InstructionCommanding => "Instruction-Commanding",
            InstructionEncouraging => "Instruction-Encouraging",
            PromptingChallengeFinding => "Prompting-Challenge-finding",
            PromptingHinting => "Prompting-Hinting",
            PromptingChecking => "Prompting-Checking",
            PromptingThoughtProvoking => "Prompting-Thought-provoking",
            PromptingAskingForHelp => "Prompting-Asking-for-help",
            StatementComprehension => "Statement-Comprehension",
            StatementElaboration => "Statement-Elaboration",
            StatementSenseMaking => "Statement-Sense-making",
            StatementAcceptingReject => "Statement-Accepting/Reject",
            StatementFeedback => "Statement-Feedback",
            Miscellaneous => "Miscellaneous",
        }
    }

    pub fn knowledge_class(self) -> KnowledgeClass {
        use MessageType::*;
        match self {
            InstructionFixing | PromptingHinting | StatementComprehension => KnowledgeClass::Telling,
            PromptingThoughtProvoking | StatementElaboration | StatementSenseMaking => {
                KnowledgeClass::Building
            }
            _ => KnowledgeClass::Other,
        }
    }

    pub fn is_knowledge_building(self) -> bool {
        self.knowledge_class() == KnowledgeClass::Building
    }

    pub fn is_knowledge_telling(self) -> bool {
        self.knowledge_class() == KnowledgeClass::Telling
    }

    /// Finds a label in free text. An exact (normalized) match on the first
    /// non-empty line wins; otherwise the highest-priority label mentioned anywhere.
    pub fn parse_label(text: &str) -> Option<MessageType> {
        let first = text.lines().map(str::trim).find(|l| !l.is_empty())?;
        let first = first
            .strip_prefix("TYPE:")
            .or_else(|| first.strip_prefix("Type:"))
            .unwrap_or(first);
        let norm = normalize_label(first);
        if let Some(t) = Self::ALL.iter().find(|t| normalize_label(t.label()) == norm) {
            return Some(*t);
        }
        let whole = normalize_label(text);
        Self::ALL
            .iter()
            .filter(|t| whole.contains(&normalize_label(t.label())))
            .min_by_key(|t| t.category().priority())
            .copied()
    }
}

fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MessageType {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_label(s);
        Self::ALL
            .iter()
            .find(|t| normalize_label(t.label()) == norm)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for MessageType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for MessageType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown message type `{0}`")]
    UnknownLabel(String),
    #[error("density of an empty message list is undefined")]
    Empty,
    #[error("message {0} has no phase tag")]
    MissingPhase(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub message_type: MessageType,
    /// Set when the classifier could not produce a real label.
    pub degraded: bool,
}

pub trait Classifier: Send + Sync {
    /// `context` holds the messages preceding `message`, oldest first.
    fn classify(&self, message: &ChatMessage, context: &[ChatMessage]) -> Classification;
}

/// Asks the model through the classify template.
#[derive(Clone)]
pub struct PromptedClassifier {
    gateway: Gateway,
    context_window: usize,
}

impl PromptedClassifier {
    pub fn new(gateway: Gateway) -> Self {
        Self {
            gateway,
            context_window: DEFAULT_CONTEXT_WINDOW,
        }
    }

    pub fn with_context_window(mut self, k: usize) -> Self {
        self.context_window = k;
        self
    }
}

impl Classifier for PromptedClassifier {
    fn classify(&self, message: &ChatMessage, context: &[ChatMessage]) -> Classification {
        let context = tail(context, self.context_window);
        let rendered_context = if context.is_empty() {
            "(none)".to_string()
        } else {
            render_conversation(context)
        };
        let request = self
            .gateway
            .request(names::CLASSIFY)
            .bind("context", rendered_context)
            .bind("message", render_conversation(std::slice::from_ref(message)));
        match self.gateway.complete(&request) {
            Ok(c) => match MessageType::parse_label(&c.text) {
                Some(t) => Classification {
                    message_type: t,
                    degraded: false,
                },
                None => {
                    tracing::warn!(completion = %c.text, "classifier returned no known label");
                    degraded()
                }
            },
            Err(e) => {
                tracing::warn!(error = %e, "classifier unavailable");
                degraded()
            }
        }
    }
}

fn degraded() -> Classification {
    Classification {
        message_type: MessageType::Miscellaneous,
        degraded: true,
    }
}

/// Rule-based classifier driven by cue phrases; needs no model.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordClassifier;

const GREETINGS: &[&str] = &[
    "hi", "hello", "hey", "thanks", "thank", "bye", "goodbye", "welcome", "nice to meet",
];
const ENCOURAGING: &[&str] = &[
    "try again", "keep going", "you can do it", "don't give up", "do not give up", "give it another",
    "almost there", "you're close", "you are close",
];
const FIXING_VERBS: &[&str] = &[
    "change", "fix", "replace", "correct", "swap", "switch", "remove", "delete", "add", "use",
    "call", "set", "update", "move", "rename", "make",
];
const COMMANDING_VERBS: &[&str] = &[
    "submit", "run", "copy", "paste", "type", "write", "assemble", "combine", "put", "press",
    "click", "print", "return", "implement", "code", "go", "do", "show", "send", "start",
];
const CHALLENGE_CUES: &[&str] = &[
    "where are you stuck", "which part", "what part", "what is confusing", "what's confusing",
    "where do you get stuck", "what are you struggling", "what do you find difficult",
    "which line", "what is the problem", "what's the problem", "what went wrong",
];
const HINT_CUES: &[&str] = &[
    "have you considered", "how about", "what about", "maybe try", "hint", "instead of",
    "have you tried", "did you consider", "would it help",
];
const THOUGHT_CUES: &[&str] = &[
    "what if", "what will happen", "what would happen", "what happens if", "why do you think",
    "can you think of", "how would", "why does", "why is", "why do", "why did", "why would",
    "how could", "in real life", "any other", "another algorithm", "what else",
];
const HELP_CUES: &[&str] = &[
    "help me", "can you help", "could you help", "could you explain it to me",
    "can you explain it to me", "i don't know how", "i'm not sure how", "i am not sure how",
    "how do i", "how should i", "what should i", "can you teach", "could you teach", "show me",
];
const CHECK_CUES: &[&str] = &[
    "can you explain", "could you explain", "do you know", "do you understand", "what is",
    "what does", "what are", "can you tell", "could you tell", "how does", "how do you",
    "what do you", "can you show",
];
const SENSE_CUES: &[&str] = &[
    "i see", "i realize", "i realised", "i realized", "now i understand", "now i get",
    "i was wrong", "that's why", "that is why", "oh,", "oh!", "oh ", "i get it", "makes sense",
    "i understand now", "i misunderstood",
];
const ELABORATION_CUES: &[&str] = &[
    "for example", "e.g.", "for instance", "such as", "in real life", "similarly", "imagine",
    "like when", "just like",
];
const FEEDBACK_CUES: &[&str] = &[
    "good job", "great job", "well done", "nice work", "perfect", "excellent", "that's wrong",
    "that is wrong", "not quite", "not correct", "incorrect", "that's correct", "that is correct",
    "good point", "great answer", "exactly", "you got it", "close, but", "that's right",
    "that is right", "good", "great", "nice",
];
const ACCEPT_CUES: &[&str] = &[
    "yes", "no", "yeah", "yep", "nope", "okay", "ok", "sure", "right", "agreed", "i agree",
    "sounds good", "alright", "correct",
];

fn sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', '\n', ';'])
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn has_any(haystack: &str, cues: &[&str]) -> bool {
    cues.iter().any(|c| haystack.contains(c))
}

fn starts_with_word(sentence: &str, set: &[&str]) -> bool {
    let mut w = words(sentence).into_iter();
    let mut first = w.next();
    // "please change ..." and "now, run ..." are still imperatives
    if matches!(first.as_deref(), Some("please" | "now" | "then" | "so" | "just" | "and")) {
        first = w.next();
    }
    first.is_some_and(|f| set.contains(&f.as_str()))
}

fn looks_like_code(text: &str) -> bool {
    text.contains("```")
        || text.contains(" = ")
        || text.contains("==")
        || text.contains("()")
        || text.contains("[")
        || text.contains("def ")
}

impl KeywordClassifier {
    pub fn label(&self, role: Role, text: &str) -> MessageType {
        use MessageType::*;
        let lower = text.to_lowercase();
        let lower = lower.trim();
        if lower.is_empty() {
            return Miscellaneous;
        }
        let sents = sentences(lower);
        let is_question = text.contains('?');

        // Instruction
        if has_any(lower, ENCOURAGING) {
            return InstructionEncouraging;
        }
        let imperative_fix = sents.iter().any(|s| starts_with_word(s, FIXING_VERBS));
        let imperative_cmd = sents.iter().any(|s| starts_with_word(s, COMMANDING_VERBS));
        if role == Role::Tutor && (imperative_fix || imperative_cmd) && !is_question {
            let fixes = imperative_fix
                && (looks_like_code(text)
                    || has_any(lower, &["instead", "should be", "wrong", "incorrect", "mistake", "so that"]));
            return if fixes { InstructionFixing } else { InstructionCommanding };
        }

        // Prompting
        if is_question {
            if has_any(lower, HELP_CUES) || (role == Role::Tutee && has_any(lower, &["how to", "i don't know", "i do not know"])) {
                return PromptingAskingForHelp;
            }
            if has_any(lower, CHALLENGE_CUES) {
                return PromptingChallengeFinding;
            }
            if has_any(lower, HINT_CUES) {
                return PromptingHinting;
            }
            if has_any(lower, THOUGHT_CUES) {
                return PromptingThoughtProvoking;
            }
            if has_any(lower, CHECK_CUES) || role == Role::Tutor {
                return PromptingChecking;
            }
            return PromptingAskingForHelp;
        }

        // Statement
        let ws = words(lower);
        let only_social = !ws.is_empty()
            && ws.len() <= 10
            && has_any(lower, GREETINGS)
            && !looks_like_code(text)
            && !has_any(lower, ELABORATION_CUES);
        if has_any(lower, SENSE_CUES) && !only_social {
            return StatementSenseMaking;
        }
        if has_any(lower, ELABORATION_CUES) {
            return StatementElaboration;
        }
        if only_social {
            return Miscellaneous;
        }
        let first = ws.first().map(String::as_str).unwrap_or("");
        if ws.len() <= 6 && has_any(lower, FEEDBACK_CUES) && !ACCEPT_CUES.contains(&first) {
            return StatementFeedback;
        }
        if ws.len() <= 4 && ACCEPT_CUES.contains(&first) {
            return StatementAcceptingReject;
        }
        if role == Role::Tutor && ws.len() <= 10 && has_any(lower, FEEDBACK_CUES) {
            return StatementFeedback;
        }
        if ACCEPT_CUES.contains(&first) && ws.len() <= 8 {
            return StatementAcceptingReject;
        }
        StatementComprehension
    }
}

impl Classifier for KeywordClassifier {
    fn classify(&self, message: &ChatMessage, _context: &[ChatMessage]) -> Classification {
        Classification {
            message_type: self.label(message.role, &message.text),
            degraded: false,
        }
    }
}

/// Knowledge-building messages over all messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Density {
    pub count: usize,
    pub total: usize,
}

impl Density {
    pub fn ratio(self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

pub fn kb_density<I>(types: I) -> Result<Density, TaxonomyError>
where
    I: IntoIterator<Item = MessageType>,
{
    let mut count = 0;
    let mut total = 0;
    for t in types {
        total += 1;
        count += usize::from(t.is_knowledge_building());
    }
    if total == 0 {
        return Err(TaxonomyError::Empty);
    }
    Ok(Density { count, total })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedMessage {
    pub index: usize,
    pub role: Role,
    pub text: String,
    #[serde(rename = "type")]
    pub message_type: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

pub fn read_annotated(path: impl AsRef<Path>) -> Result<Vec<AnnotatedMessage>, TaxonomyError> {
    parse_annotated(&fs::read_to_string(path)?)
}

pub fn parse_annotated(text: &str) -> Result<Vec<AnnotatedMessage>, TaxonomyError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TaxonomyError::Format {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_annotated<W: Write>(out: &mut W, messages: &[AnnotatedMessage]) -> io::Result<()> {
    for m in messages {
        writeln!(out, "{}", serde_json::to_string(m).expect("annotated message serializes"))?;
    }
    Ok(())
}

/// Report slice; concept check is folded into problem solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSlice {
    ProblemSolving,
    Discussion,
}

impl ReportSlice {
    pub fn of(phase: Phase) -> Self {
        match phase {
            Phase::ConceptCheck | Phase::ProblemSolving => ReportSlice::ProblemSolving,
            Phase::Discussion => ReportSlice::Discussion,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ReportSlice::ProblemSolving => "Problem-solving",
            ReportSlice::Discussion => "Discussion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SliceCounts {
    pub total: usize,
    pub by_type: BTreeMap<MessageType, usize>,
}

impl SliceCounts {
    pub fn count(&self, t: MessageType) -> usize {
        self.by_type.get(&t).copied().unwrap_or(0)
    }

    pub fn knowledge_building(&self) -> usize {
        self.by_type
            .iter()
            .filter(|(t, _)| t.is_knowledge_building())
            .map(|(_, n)| n)
            .sum()
    }

    pub fn knowledge_telling(&self) -> usize {
        self.by_type
            .iter()
            .filter(|(t, _)| t.is_knowledge_telling())
            .map(|(_, n)| n)
            .sum()
    }

    /// `None` for an empty slice.
    pub fn density_of(&self, n: usize) -> Option<f64> {
        (self.total > 0).then(|| n as f64 / self.total as f64)
    }

    pub fn kb_density(&self) -> Option<f64> {
        self.density_of(self.knowledge_building())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum ReportRow {
    Subcategory {
        slice: ReportSlice,
        #[serde(rename = "type")]
        message_type: MessageType,
        count: usize,
        total: usize,
        density: Option<f64>,
    },
    KnowledgeBuilding {
        slice: ReportSlice,
        count: usize,
        total: usize,
        density: Option<f64>,
    },
    KnowledgeTelling {
        slice: ReportSlice,
        count: usize,
        total: usize,
        density: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub slices: BTreeMap<ReportSlice, SliceCounts>,
}

pub fn phase_report(messages: &[AnnotatedMessage]) -> Result<PhaseReport, TaxonomyError> {
    let mut slices: BTreeMap<ReportSlice, SliceCounts> = [ReportSlice::ProblemSolving, ReportSlice::Discussion]
        .into_iter()
        .map(|s| (s, SliceCounts::default()))
        .collect();
    for m in messages {
        let phase = m.phase.ok_or(TaxonomyError::MissingPhase(m.index))?;
        let slice = slices.get_mut(&ReportSlice::of(phase)).expect("both slices present");
        slice.total += 1;
        *slice.by_type.entry(m.message_type).or_default() += 1;
    }
    Ok(PhaseReport { slices })
}

impl PhaseReport {
    pub fn slice(&self, s: ReportSlice) -> &SliceCounts {
        &self.slices[&s]
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for (&slice, counts) in &self.slices {
            for t in MessageType::SUBCATEGORIES {
                let count = counts.count(t);
                rows.push(ReportRow::Subcategory {
                    slice,
                    message_type: t,
                    count,
                    total: counts.total,
                    density: counts.density_of(count),
                });
            }
            let kb = counts.knowledge_building();
            rows.push(ReportRow::KnowledgeBuilding {
                slice,
                count: kb,
                total: counts.total,
                density: counts.density_of(kb),
            });
            let kt = counts.knowledge_telling();
            rows.push(ReportRow::KnowledgeTelling {
                slice,
                count: kt,
                total: counts.total,
                density: counts.density_of(kt),
            });
        }
        rows
    }

    /// Aligned text table: one row per subcategory, one column per slice.
    pub fn render_table(&self) -> String {
        let fmt = |d: Option<f64>| d.map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
        let mut lines = vec![format!(
            "{:<30} {:>16} {:>16}",
            "type",
            ReportSlice::ProblemSolving.title(),
            ReportSlice::Discussion.title()
        )];
        let ps = self.slice(ReportSlice::ProblemSolving);
        let ds = self.slice(ReportSlice::Discussion);
        for t in MessageType::SUBCATEGORIES {
            lines.push(format!(
                "{:<30} {:>16} {:>16}",
                t.label(),
                fmt(ps.density_of(ps.count(t))),
                fmt(ds.density_of(ds.count(t)))
            ));
        }
        lines.push(format!(
            "{:<30} {:>16} {:>16}",
            "Knowledge-building",
            fmt(ps.kb_density()),
            fmt(ds.kb_density())
        ));
        lines.push(format!(
            "{:<30} {:>16} {:>16}",
            "Knowledge-telling",
            fmt(ps.density_of(ps.knowledge_telling())),
            fmt(ds.density_of(ds.knowledge_telling()))
        ));
        lines.push(format!("{:<30} {:>16} {:>16}", "Messages", ps.total, ds.total));
        lines.join("\n")
    }
}

/// Classifies every message of a transcript with `K` messages of context.
pub fn annotate(
    classifier: &dyn Classifier,
    messages: &[ChatMessage],
    phases: Option<&[Phase]>,
) -> Vec<(AnnotatedMessage, bool)> {
    messages
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let c = classifier.classify(m, &messages[..i]);
            (
                AnnotatedMessage {
                    index: i,
                    role: m.role,
                    text: m.text.clone(),
                    message_type: c.message_type,
                    phase: phases.and_then(|p| p.get(i).copied()),
                },
                c.degraded,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use MessageType::*;

    #[test]
    fn partition_is_disjoint_and_complete() {
        let kb: Vec<_> = MessageType::ALL.iter().filter(|t| t.is_knowledge_building()).collect();
        let kt: Vec<_> = MessageType::ALL.iter().filter(|t| t.is_knowledge_telling()).collect();
        assert_eq!(kb, [&PromptingThoughtProvoking, &StatementElaboration, &StatementSenseMaking]);
        assert_eq!(kt, [&InstructionFixing, &PromptingHinting, &StatementComprehension]);
        assert!(kb.iter().all(|t| !kt.contains(t)));
    }

    #[test]
    fn labels_round_trip() {
        for t in MessageType::ALL {
            assert_eq!(t.label().parse::<MessageType>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<MessageType>(&json).unwrap(), t);
        }
        assert!("Prompting-Nothing".parse::<MessageType>().is_err());
    }

    #[test]
    fn label_parsing_is_tolerant() {
        assert_eq!(MessageType::parse_label(" statement - sense-making\n"), Some(StatementSenseMaking));
        assert_eq!(MessageType::parse_label("TYPE: Statement-Accepting/Reject"), Some(StatementAcceptingReject));
        assert_eq!(
            MessageType::parse_label("It is Statement-Feedback, maybe Prompting-Checking"),
            Some(PromptingChecking)
        );
        assert_eq!(MessageType::parse_label("no idea"), None);
    }

    #[test]
    fn keyword_classifier_examples() {
        let k = KeywordClassifier;
        assert_eq!(
            k.label(Role::Tutor, "Call the input() function twice so that N and K are separately taken as input."),
            InstructionFixing
        );
        assert_eq!(
            k.label(Role::Tutor, "What will happen if we switch the min / max updating code?"),
            PromptingThoughtProvoking
        );
        assert_eq!(
            k.label(Role::Tutor, "No, thank you so much for your guidance so far!"),
            Miscellaneous
        );
        assert_eq!(k.label(Role::Tutor, "Submit the code now."), InstructionCommanding);
        assert_eq!(k.label(Role::Tutee, "Could you explain it to me?"), PromptingAskingForHelp);
        assert_eq!(k.label(Role::Tutor, "Which part is confusing you?"), PromptingChallengeFinding);
        assert_eq!(k.label(Role::Tutee, "Oh, that's why the list must be sorted!"), StatementSenseMaking);
    }

    #[test]
    fn density_requires_messages() {
        assert!(matches!(kb_density(Vec::new()), Err(TaxonomyError::Empty)));
        let d = kb_density([StatementComprehension, StatementElaboration]).unwrap();
        assert_eq!((d.count, d.total), (1, 2));
        assert_eq!(kb_density([Miscellaneous]).unwrap().ratio(), 0.0);
    }

    fn msg(i: usize, t: MessageType, phase: Option<Phase>) -> AnnotatedMessage {
        AnnotatedMessage {
            index: i,
            role: Role::Tutor,
            text: format!("m{i}"),
            message_type: t,
            phase,
        }
    }

    #[test]
    fn phase_report_handles_empty_slices_and_missing_tags() {
        let msgs = vec![
            msg(0, StatementSenseMaking, Some(Phase::ConceptCheck)),
            msg(1, StatementComprehension, Some(Phase::ProblemSolving)),
        ];
        let r = phase_report(&msgs).unwrap();
        assert_eq!(r.slice(ReportSlice::ProblemSolving).kb_density(), Some(0.5));
        assert_eq!(r.slice(ReportSlice::Discussion).kb_density(), None);
        assert_eq!(
            r.rows().iter().filter(|r| matches!(r, ReportRow::Subcategory { .. })).count(),
            26
        );
        assert!(r.render_table().contains("Statement-Sense-making"));
        assert!(matches!(
            phase_report(&[msg(4, Miscellaneous, None)]),
            Err(TaxonomyError::MissingPhase(4))
        ));
    }

    #[test]
    fn annotated_jsonl_round_trips() {
        let msgs = vec![msg(0, StatementAcceptingReject, Some(Phase::Discussion))];
        let mut buf = Vec::new();
        write_annotated(&mut buf, &msgs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"type\":\"Statement-Accepting/Reject\""));
        assert_eq!(parse_annotated(&text).unwrap(), msgs);
    }
}
