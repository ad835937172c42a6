//! A deterministic, model-free backend that answers every crate template with
//! simple lexical rules. It keeps demos and end-to-end tests runnable without a
//! provider; it is not meant to imitate a real model's quality.

use std::collections::BTreeSet;

use crate::conversation::{parse_conversation, Role};
use crate::dialogue_taxonomy::{Category, KeywordClassifier};
use crate::knowledge_state::{jaccard, tokens, KnowledgeState, DEFAULT_EDIT_SIMILARITY};
use crate::llm_gateway::{names, Backend, BackendError, Prompt};
use crate::mode_shifting::is_non_answer;
use crate::reflect_respond::{fence, fenced_blocks, DEFAULT_FALLBACK, NONE_MARKER};

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "of", "in", "on", "at", "to",
    "for", "and", "or", "it", "its", "this", "that", "with", "as", "by", "from", "if", "then",
    "so", "we", "you", "i", "they", "he", "she", "do", "does", "did", "can", "could", "would",
    "should", "will", "what", "which", "when", "how", "why", "where", "who", "there", "their",
    "our", "your", "my", "me", "us", "not", "no", "yes", "but", "also", "into", "than", "any",
    "all", "some", "one", "each", "has", "have", "had", "about", "following", "below", "above",
    "answer", "choose", "explain", "question", "code", "python", "blank", "fill", "replace",
    "part", "value", "values", "returns", "return", "use", "uses", "used",
];

const REASON_MARKERS: &[&str] = &[
    "because", "since", "so that", "therefore", "this means", "that is why", "that's why",
    "which means", "due to", "in order to", "otherwise", "thus", "as a result",
];

const EXAMPLE_MARKERS: &[&str] = &[
    "for example", "e.g.", "for instance", "such as", "like when", "imagine", "in real life",
    "example",
];

fn content_words(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()) && t.chars().any(char::is_alphanumeric))
        .collect()
}

fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.intersection(b).count()
}

fn binding<'a>(prompt: &'a Prompt<'_>, key: &str) -> Result<&'a str, BackendError> {
    prompt
        .bindings
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| BackendError::Fatal(format!("`{}` prompt lacks `{key}`", prompt.template)))
}

fn looks_like_code_line(line: &str) -> bool {
    let t = line.trim();
    let starts = ["if ", "elif ", "else:", "while ", "for ", "def ", "return", "print(", "import "];
    starts.iter().any(|s| t.starts_with(s))
        || [" = ", "==", "+=", "-=", "//", "()"].iter().any(|s| t.contains(s)) && !t.ends_with('.')
}

/// Splits a message into prose and code snippets.
pub fn split_prose_and_code(text: &str) -> (String, Vec<String>) {
    let mut code: Vec<String> = fenced_blocks(text);
    let mut outside = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        outside.push_str(&rest[..start]);
        match rest[start + 3..].find("```") {
            Some(end) => rest = &rest[start + 3 + end + 3..],
            None => {
                rest = "";
            }
        }
    }
    outside.push_str(rest);

    let mut prose: Vec<&str> = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    for line in outside.lines() {
        if looks_like_code_line(line) || (!block.is_empty() && line.starts_with([' ', '\t']) && !line.trim().is_empty()) {
            block.push(line);
        } else {
            if !block.is_empty() {
                code.push(block.join("\n"));
                block.clear();
            }
            if !line.trim().is_empty() {
                prose.push(line.trim());
            }
        }
    }
    if !block.is_empty() {
        code.push(block.join("\n"));
    }
    (prose.join(" "), code)
}

#[derive(Debug, Default)]
pub struct HeuristicBackend {
    calls: std::sync::atomic::AtomicUsize,
}

impl HeuristicBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn extract(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let conversation = parse_conversation(binding(prompt, "conversation")?);
        let Some(last) = conversation.iter().rev().find(|m| m.role == Role::Tutor) else {
            return Ok(NONE_MARKER.into());
        };
        let (prose, code) = split_prose_and_code(&last.text);
        let category = KeywordClassifier.label(Role::Tutor, &last.text).category();
        let trivial = tokens(&last.text).len() <= 3;
        if code.is_empty() && (trivial || matches!(category, Category::Prompting | Category::Miscellaneous)) {
            return Ok(NONE_MARKER.into());
        }
        let mut out = prose;
        for snippet in code {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&fence(&snippet));
        }
        Ok(out)
    }

    fn update(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let state = KnowledgeState::parse_lenient(binding(prompt, "knowledge")?)
            .map_err(|e| BackendError::Fatal(format!("bad knowledge binding: {e}")))?;
        let (prose, code) = split_prose_and_code(binding(prompt, "new_knowledge")?);
        let mut facts = state.facts().to_vec();
        let mut snippets = state.code_implementation().to_vec();
        merge(&mut facts, prose);
        for snippet in code {
            merge(&mut snippets, fence(&snippet));
        }
        let merged = KnowledgeState::new_dedup(facts, snippets)
            .map_err(|e| BackendError::Fatal(format!("merge failed: {e}")))?;
        Ok(merged.serialize())
    }

    fn retrieve(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let state = KnowledgeState::parse_lenient(binding(prompt, "knowledge")?)
            .map_err(|e| BackendError::Fatal(format!("bad knowledge binding: {e}")))?;
        let query = content_words(binding(prompt, "conversation")?);
        let pick = |entries: &[String]| -> Vec<usize> {
            let mut scored: Vec<(usize, usize)> = entries
                .iter()
                .enumerate()
                .map(|(i, e)| (overlap(&query, &content_words(e)), i))
                .filter(|(s, _)| *s > 0)
                .collect();
            scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(3).map(|(_, i)| i).collect()
        };
        Ok(format!(
            "{{\"facts\": {:?}, \"code_implementation\": {:?}}}",
            pick(state.facts()),
            pick(state.code_implementation())
        ))
    }

    fn compose(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let conversation = parse_conversation(binding(prompt, "conversation")?);
        let statement = binding(prompt, "statement")?;
        let (facts, code) = split_prose_and_code(statement);
        let question = conversation
            .iter()
            .rev()
            .find(|m| m.role == Role::Tutor)
            .map(|m| m.text.as_str())
            .unwrap_or("");

        if let Some(mcq) = parse_choices(question) {
            return Ok(answer_choice(&mcq, &facts, &code));
        }

        let mut reply = if facts.is_empty() {
            "Let me try with what I know.".to_string()
        } else {
            format!("I think I understand: {}", lower_first(&facts))
        };
        for snippet in code {
            reply.push('\n');
            reply.push_str(&fence(&snippet));
        }
        Ok(reply)
    }

    fn response_quality(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let phase = binding(prompt, "phase")?;
        let question = binding(prompt, "question")?;
        let answer = binding(prompt, "answer")?;
        let lower = answer.to_lowercase();
        let verdict = if is_non_answer(answer) {
            "NeedsElaboration"
        } else if !REASON_MARKERS.iter().any(|m| lower.contains(m)) {
            if overlap(&content_words(question), &content_words(answer)) == 0 {
                "OffTopic"
            } else {
                "NeedsElaboration"
            }
        } else if phase == "discussion" && !EXAMPLE_MARKERS.iter().any(|m| lower.contains(m)) {
            "NeedsExample"
        } else {
            "Satisfactory"
        };
        Ok(verdict.to_string())
    }

    fn summarize(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let answers: Vec<String> = binding(prompt, "answers")?
            .lines()
            .map(|l| l.trim().trim_start_matches("- ").trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if answers.is_empty() {
            return Ok("Thank you for answering my question!".into());
        }
        let body = answers
            .iter()
            .map(|a| lower_first(a.trim_end_matches(['.', '!'])))
            .collect::<Vec<_>>()
            .join(", and ");
        Ok(format!("So, to sum up: {body}. Thank you!"))
    }

    fn classify(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        let message = parse_conversation(binding(prompt, "message")?);
        let message = message
            .last()
            .ok_or_else(|| BackendError::Fatal("empty classify message".into()))?;
        Ok(KeywordClassifier.label(message.role, &message.text).label().to_string())
    }
}

fn merge(entries: &mut Vec<String>, new: String) {
    if new.trim().is_empty() || entries.contains(&new) {
        return;
    }
    let best = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (jaccard(e, &new), i))
        .filter(|(s, _)| *s >= DEFAULT_EDIT_SIMILARITY)
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((_, i)) => entries[i] = new,
        None => entries.push(new),
    }
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if chars.clone().next().is_some_and(char::is_lowercase) => {
            c.to_lowercase().chain(chars).collect()
        }
        Some(c) => std::iter::once(c).chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug)]
struct ChoiceQuestion {
    stem: String,
    choices: Vec<(char, String)>,
}

/// Recognizes `A) ...` through `D) ...` choice blocks.
fn parse_choices(text: &str) -> Option<ChoiceQuestion> {
    let mut stem = Vec::new();
    let mut choices: Vec<(char, String)> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        let mut chars = t.chars();
        let head = chars.next();
        let is_label = matches!(head, Some('A'..='D')) && chars.next() == Some(')');
        if is_label {
            choices.push((head.unwrap(), t[2..].trim().to_string()));
        } else if let Some(last) = choices.last_mut() {
            if !t.is_empty() {
                if !last.1.is_empty() {
                    last.1.push('\n');
                }
                last.1.push_str(line.trim_end());
            }
        } else {
            stem.push(line);
        }
    }
    (choices.len() >= 2).then(|| ChoiceQuestion {
        stem: stem.join("\n"),
        choices,
    })
}

fn answer_choice(q: &ChoiceQuestion, facts: &str, code: &[String]) -> String {
    let code_stem = q.stem.lines().any(looks_like_code_line);
    if code_stem && code.is_empty() {
        return DEFAULT_FALLBACK.to_string();
    }
    let mut known = content_words(facts);
    for snippet in code {
        known.extend(content_words(snippet));
    }
    let mut scored: Vec<(usize, char)> = q
        .choices
        .iter()
        .map(|(letter, text)| (overlap(&known, &content_words(text)), *letter))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    match scored.as_slice() {
        [(best, letter), rest @ ..] if *best > 0 && rest.first().is_none_or(|r| r.0 < *best) => {
            format!("I think the answer is {letter}, because it matches what I know: {facts}")
        }
        _ => "I'm not sure which choice is right. Could you explain it to me?".to_string(),
    }
}

impl Backend for HeuristicBackend {
    fn complete(&self, prompt: &Prompt<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        match prompt.template {
            names::EXTRACT => self.extract(prompt),
            names::UPDATE => self.update(prompt),
            names::RETRIEVE => self.retrieve(prompt),
            names::COMPOSE => self.compose(prompt),
            names::CLASSIFY => self.classify(prompt),
            names::RESPONSE_QUALITY => self.response_quality(prompt),
            names::SUMMARIZE => self.summarize(prompt),
            names::PARAPHRASE => Ok(binding(prompt, "message")?.to_string()),
            names::DEEP_QUESTION => Ok(format!(
                "Why does that step matter for {}? Could you explain how it works?",
                binding(prompt, "concept")?
            )),
            names::THINKING_QUESTION => Ok(format!(
                "Can you think of a real-life situation where {} would be useful? How would it work there?",
                binding(prompt, "concept")?
            )),
            other => Err(BackendError::Fatal(format!("no offline rule for `{other}`"))),
        }
    }

    fn calls(&self) -> Option<usize> {
        Some(self.calls.load(std::sync::atomic::Ordering::SeqCst))
    }
}
