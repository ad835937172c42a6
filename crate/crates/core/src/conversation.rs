//! Chat turns and activity phases shared by every stage of the tutoring loop.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tutor,
    Tutee,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Tutor => "tutor",
            Role::Tutee => "tutee",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn tutor(text: impl Into<String>) -> Self {
        Self {
            role: Role::Tutor,
            text: text.into(),
        }
    }

    pub fn tutee(text: impl Into<String>) -> Self {
        Self {
            role: Role::Tutee,
            text: text.into(),
        }
    }
}

/// Activity phase. Advances ConceptCheck → ProblemSolving → Discussion and never goes back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ConceptCheck,
    ProblemSolving,
    Discussion,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ConceptCheck => "concept_check",
            Phase::ProblemSolving => "problem_solving",
            Phase::Discussion => "discussion",
        }
    }
}

/// Renders messages the way the prompt few-shots lay them out: `role: text` per line.
pub fn render_conversation(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{}: {}", m.role, m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`render_conversation`] for text where every message starts a
/// line with `tutor: ` or `tutee: `; continuation lines join the previous message.
pub fn parse_conversation(text: &str) -> Vec<ChatMessage> {
    let mut out: Vec<ChatMessage> = Vec::new();
    for line in text.lines() {
        let started = [Role::Tutor, Role::Tutee].into_iter().find_map(|role| {
            line.strip_prefix(role.as_str())
                .and_then(|rest| rest.strip_prefix(": ").or_else(|| rest.strip_prefix(':')))
                .map(|rest| (role, rest))
        });
        match (started, out.last_mut()) {
            (Some((role, rest)), _) => out.push(ChatMessage {
                role,
                text: rest.to_string(),
            }),
            (None, Some(last)) => {
                last.text.push('\n');
                last.text.push_str(line);
            }
            (None, None) => {}
        }
    }
    out
}

/// The last `n` messages of a history.
pub fn tail(messages: &[ChatMessage], n: usize) -> &[ChatMessage] {
    &messages[messages.len().saturating_sub(n)..]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversation_round_trips_multiline_messages() {
        let msgs = vec![
            ChatMessage::tutee("I wrote this:\n```python\nx = 1\n```"),
            ChatMessage::tutor("Start from 0."),
        ];
        assert_eq!(parse_conversation(&render_conversation(&msgs)), msgs);
    }

    #[test]
    fn phases_are_ordered() {
        assert!(Phase::ConceptCheck < Phase::ProblemSolving);
        assert!(Phase::ProblemSolving < Phase::Discussion);
    }

    #[test]
    fn tail_is_bounded() {
        let msgs = vec![ChatMessage::tutor("a"), ChatMessage::tutee("b")];
        assert_eq!(tail(&msgs, 3).len(), 2);
        assert_eq!(tail(&msgs, 1)[0].text, "b");
    }
}
