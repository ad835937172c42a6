//! Multiple-choice question banks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
            Letter::D => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Letter::from_char), chars.next()) {
            (Some(l), None) => Ok(l),
            _ => Err(format!("`{s}` is not one of A, B, C, D")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum McqCategory {
    Understanding,
    Implementation,
    Analysis,
}

impl McqCategory {
    pub const ALL: [McqCategory; 3] = [McqCategory::Understanding, McqCategory::Implementation, McqCategory::Analysis];

    pub fn short(self) -> &'static str {
        match self {
            McqCategory::Understanding => "U",
            McqCategory::Implementation => "I",
            McqCategory::Analysis => "A",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcq {
    pub id: String,
    pub topic: String,
    pub category: McqCategory,
    pub stem: String,
    pub choices: BTreeMap<Letter, String>,
    pub answer: Letter,
    /// Authored stand-in rather than a published item.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub substitute: bool,
}

pub const QUESTIONS_PER_CATEGORY: usize = 3;

impl Mcq {
    /// The question as a tutor message: instruction, stem, then `A) ...` lines.
    pub fn prompt(&self) -> String {
        let mut out = String::from("Solve this multiple-choice question and explain why you chose your answer.\n");
        out.push_str(self.stem.trim_end());
        out.push('\n');
        for (letter, text) in &self.choices {
            out.push_str(&format!("{letter}) {}\n", text.trim_end()));
        }
        out.trim_end().to_string()
    }

    /// The prompt used when the first reply names no letter.
    pub fn reprompt(&self) -> String {
        format!("Answer with a single letter (A, B, C or D).\n{}", self.prompt())
    }
}

pub fn parse_bank(text: &str) -> Result<Vec<Mcq>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mcq: Mcq = serde_json::from_str(line).map_err(|e| EvalError::Format {
            what: "MCQ bank".into(),
            message: format!("line {}: {e}", i + 1),
        })?;
        if mcq.choices.len() != 4 {
            return Err(EvalError::Format {
                what: "MCQ bank".into(),
                message: format!("{} has {} choices", mcq.id, mcq.choices.len()),
            });
        }
        out.push(mcq);
    }
    Ok(out)
}

/// Loads a bank and checks it has three questions per category.
pub fn load_bank(path: impl AsRef<Path>) -> Result<Vec<Mcq>, EvalError> {
    let path = path.as_ref();
    let bank = parse_bank(&crate::read(path)?)?;
    for category in McqCategory::ALL {
        let n = bank.iter().filter(|m| m.category == category).count();
        if n != QUESTIONS_PER_CATEGORY {
            return Err(EvalError::Format {
                what: path.display().to_string(),
                message: format!("{n} {category:?} questions, expected {QUESTIONS_PER_CATEGORY}"),
            });
        }
    }
    Ok(bank)
}
