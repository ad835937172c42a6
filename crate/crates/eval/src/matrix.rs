//! Score matrices: results per checkpoint, their JSONL rows and the rendered report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use tutee_core::knowledge_state::KnowledgeState;

use crate::mcq::{Letter, McqCategory, QUESTIONS_PER_CATEGORY};
use crate::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub category: McqCategory,
    pub answer: Letter,
    pub letters: Vec<Option<Letter>>,
    pub replies: Vec<String>,
    pub majority: Option<Letter>,
    pub correct: bool,
    pub disagreement: usize,
    /// Repeats that needed the single-letter follow-up prompt.
    pub reprompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub label: String,
    pub state: KnowledgeState,
    pub questions: Vec<QuestionResult>,
}

impl Checkpoint {
    pub fn score(&self, category: McqCategory) -> usize {
        self.questions.iter().filter(|q| q.category == category && q.correct).count()
    }

    pub fn total(&self) -> usize {
        self.questions.iter().filter(|q| q.correct).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scenario: String,
    pub topic: String,
    pub repeats: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// Set when the run stopped early; the matrix holds what finished.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum Row {
    Matrix {
        scenario: String,
        topic: String,
        repeats: usize,
        error: Option<String>,
    },
    Checkpoint {
        label: String,
        state: KnowledgeState,
    },
    Question {
        checkpoint: String,
        #[serde(flatten)]
        result: QuestionResult,
    },
}

impl ScoreMatrix {
    pub fn is_partial(&self) -> bool {
        self.error.is_some()
    }

    pub fn rows(&self) -> Vec<Row> {
        let mut rows = vec![Row::Matrix {
            scenario: self.scenario.clone(),
            topic: self.topic.clone(),
            repeats: self.repeats,
            error: self.error.clone(),
        }];
        for c in &self.checkpoints {
            rows.push(Row::Checkpoint {
                label: c.label.clone(),
                state: c.state.clone(),
            });
            rows.extend(c.questions.iter().map(|q| Row::Question {
                checkpoint: c.label.clone(),
                result: q.clone(),
            }));
        }
        rows
    }

    pub fn to_jsonl(&self) -> String {
        self.rows()
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }

    pub fn from_rows(rows: Vec<Row>) -> Result<Self, EvalError> {
        let bad = |message: &str| EvalError::Format {
            what: "score rows".into(),
            message: message.into(),
        };
        let mut rows = rows.into_iter();
        let Some(Row::Matrix { scenario, topic, repeats, error }) = rows.next() else {
            return Err(bad("first row must be the matrix header"));
        };
        let mut matrix = ScoreMatrix {
            scenario,
            topic,
            repeats,
            checkpoints: Vec::new(),
            error,
        };
        for row in rows {
            match row {
                Row::Matrix { .. } => return Err(bad("more than one matrix header")),
                Row::Checkpoint { label, state } => matrix.checkpoints.push(Checkpoint {
                    label,
                    state,
                    questions: Vec::new(),
                }),
                Row::Question { checkpoint, result } => match matrix.checkpoints.last_mut() {
                    Some(c) if c.label == checkpoint => c.questions.push(result),
                    _ => return Err(bad("question row outside its checkpoint")),
                },
            }
        }
        Ok(matrix)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EvalError> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| EvalError::Format {
                    what: "score rows".into(),
                    message: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<Vec<Row>, _>>()?;
        Self::from_rows(rows)
    }

    /// Checkpoint × category grid followed by per-question disagreement counts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Scenario {} ({}), {} repeats per question", self.scenario, self.topic, self.repeats);
        let width = self.checkpoints.iter().map(|c| c.label.len()).max().unwrap_or(10).max(10);
        let _ = writeln!(out, "{:<width$}  {:>3} {:>3} {:>3}  {:>5}", "checkpoint", "U", "I", "A", "total");
        for c in &self.checkpoints {
            let max = c.questions.len();
            let _ = write!(out, "{:<width$} ", c.label);
            for cat in McqCategory::ALL {
                let _ = write!(out, " {:>3}", format!("{}/{}", c.score(cat), QUESTIONS_PER_CATEGORY.min(max)));
            }
            let _ = writeln!(out, "  {:>5}", format!("{}/{}", c.total(), max));
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "INCOMPLETE: {e}");
        }

        let mut ids: Vec<&str> = Vec::new();
        let mut cells: BTreeMap<(&str, &str), &QuestionResult> = BTreeMap::new();
        for c in &self.checkpoints {
            for q in &c.questions {
                if !ids.contains(&q.id.as_str()) {
                    ids.push(&q.id);
                }
                cells.insert((q.id.as_str(), c.label.as_str()), q);
            }
        }
        if !ids.is_empty() {
            let _ = writeln!(out, "\nDisagreements with the most frequent answer (of {} repeats)", self.repeats);
            let _ = write!(out, "{:<10}", "question");
            for c in &self.checkpoints {
                let _ = write!(out, " {:>width$}", c.label);
            }
            out.push('\n');
            for id in ids {
                let _ = write!(out, "{id:<10}");
                for c in &self.checkpoints {
                    let cell = cells
                        .get(&(id, c.label.as_str()))
                        .map_or("-".to_string(), |q| {
                            let mark = if q.correct { "" } else { "x" };
                            format!("{}{mark}", q.disagreement)
                        });
                    let _ = write!(out, " {cell:>width$}");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "(x = majority verdict incorrect)");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, category: McqCategory, correct: bool) -> QuestionResult {
        QuestionResult {
            id: id.into(),
            category,
            answer: Letter::A,
            letters: vec![Some(Letter::A); 3],
            replies: vec!["A".into(); 3],
            majority: Some(Letter::A),
            correct,
            disagreement: 0,
            reprompts: 0,
        }
    }

    fn sample(error: Option<String>) -> ScoreMatrix {
        ScoreMatrix {
            scenario: "s".into(),
            topic: "t".into(),
            repeats: 3,
            checkpoints: vec![Checkpoint {
                label: "start".into(),
                state: KnowledgeState::empty(),
                questions: vec![
                    result("q1", McqCategory::Understanding, true),
                    result("q2", McqCategory::Analysis, false),
                ],
            }],
            error,
        }
    }

    #[test]
    fn rows_round_trip() {
        let m = sample(None);
        assert_eq!(ScoreMatrix::from_jsonl(&m.to_jsonl()).unwrap(), m);
    }

    #[test]
    fn partial_matrix_is_marked() {
        let m = sample(Some("block `x` failed".into()));
        assert!(m.render().contains("INCOMPLETE: block `x` failed"));
        assert_eq!(ScoreMatrix::from_jsonl(&m.to_jsonl()).unwrap(), m);
    }

    #[test]
    fn orphan_question_rows_are_rejected() {
        let mut rows = sample(None).rows();
        rows.remove(1);
        assert!(ScoreMatrix::from_rows(rows).is_err());
    }
}
