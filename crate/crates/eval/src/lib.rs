//! Measures what a knowledge state lets the tutee answer: multiple-choice
//! questions solved with reflection off, before and after scripted tutoring.

pub mod matrix;
pub mod mcq;
pub mod scenario;
pub mod scoring;

use std::path::{Path, PathBuf};

use thiserror::Error;

use tutee_core::conversation::ChatMessage;
use tutee_core::knowledge_state::KnowledgeState;
use tutee_core::llm_gateway::Gateway;
use tutee_core::reflect_respond::{Pipeline, PipelineConfig, PipelineSession, Trace};

use matrix::{Checkpoint, QuestionResult, ScoreMatrix};
use mcq::Mcq;
use scenario::{Scenario, Scripts};
use scoring::{aggregate, extract_letter};

pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: {message}")]
    Format { what: String, message: String },
    #[error("repeats must be odd and positive, got {0}")]
    Repeats(usize),
    #[error("invalid seed state {path}: {message}")]
    Seed { path: PathBuf, message: String },
}

pub(crate) fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Locations of the shipped evaluation data under one root.
#[derive(Debug, Clone)]
pub struct DataDir(pub PathBuf);

impl DataDir {
    pub fn mcq(&self, topic: &str) -> PathBuf {
        self.0.join("mcq").join(format!("{topic}.jsonl"))
    }

    pub fn scripts(&self, topic: &str) -> PathBuf {
        self.0.join("scripts").join(format!("{topic}.toml"))
    }

    pub fn templates(&self) -> PathBuf {
        self.0.join("templates")
    }

    /// A seed name like `state2`, or a path to a state file.
    pub fn seed(&self, topic: &str, seed: &str) -> PathBuf {
        if seed.contains('/') || seed.ends_with(".json") {
            PathBuf::from(seed)
        } else {
            self.0.join("seeds").join(topic).join(format!("{seed}.json"))
        }
    }

    pub fn load_seed(&self, topic: &str, seed: &str) -> Result<KnowledgeState, EvalError> {
        let path = self.seed(topic, seed);
        KnowledgeState::parse(&read(&path)?).map_err(|e| EvalError::Seed {
            path,
            message: e.to_string(),
        })
    }
}

/// Runs checkpoints and scenarios through the reflect/respond pipeline.
pub struct Evaluator {
    pipeline: Pipeline,
    repeats: usize,
    jobs: usize,
}

impl Evaluator {
    pub fn new(gateway: Gateway, repeats: usize) -> Result<Self, EvalError> {
        if repeats == 0 || repeats.is_multiple_of(2) {
            return Err(EvalError::Repeats(repeats));
        }
        Ok(Self {
            pipeline: Pipeline::new(gateway, PipelineConfig::default()),
            repeats,
            jobs: 1,
        })
    }

    /// Questions solved concurrently per checkpoint.
    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    fn ask(&self, state: &KnowledgeState, question: &str) -> String {
        let mut trace = Trace::new();
        self.pipeline
            .respond(state, &[ChatMessage::tutor(question)], &mut trace)
            .reply
    }

    /// Solves one question `repeats` times. Only the response flow runs, so
    /// `state` cannot change.
    pub fn solve(&self, state: &KnowledgeState, mcq: &Mcq) -> QuestionResult {
        let mut letters = Vec::with_capacity(self.repeats);
        let mut replies = Vec::with_capacity(self.repeats);
        let mut reprompts = 0;
        for _ in 0..self.repeats {
            let mut reply = self.ask(state, &mcq.prompt());
            let mut letter = extract_letter(&reply);
            if letter.is_none() {
                reprompts += 1;
                let retry = self.ask(state, &mcq.reprompt());
                letter = extract_letter(&retry);
                reply = format!("{reply}\n---\n{retry}");
                if letter.is_none() {
                    tracing::info!(question = %mcq.id, "no answer letter in reply; scored incorrect");
                }
            }
            letters.push(letter);
            replies.push(reply);
        }
        let agg = aggregate(&letters, mcq.answer);
        QuestionResult {
            id: mcq.id.clone(),
            category: mcq.category,
            answer: mcq.answer,
            letters,
            replies,
            majority: agg.majority,
            correct: agg.correct,
            disagreement: agg.disagreement,
            reprompts,
        }
    }

    pub fn checkpoint(&self, label: &str, state: &KnowledgeState, bank: &[Mcq]) -> Result<Checkpoint, EvalError> {
        let before = state.serialize();
        let questions = if self.jobs <= 1 {
            bank.iter().map(|m| self.solve(state, m)).collect()
        } else {
            let chunk = bank.len().div_ceil(self.jobs).max(1);
            std::thread::scope(|s| {
                let handles: Vec<_> = bank
                    .chunks(chunk)
                    .map(|part| s.spawn(move || part.iter().map(|m| self.solve(state, m)).collect::<Vec<_>>()))
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("solver thread panicked"))
                    .collect()
            })
        };
        if state.serialize() != before {
            return Err(EvalError::Format {
                what: format!("checkpoint `{label}`"),
                message: "knowledge state changed while solving".into(),
            });
        }
        Ok(Checkpoint {
            label: label.to_string(),
            state: state.clone(),
            questions,
        })
    }

    /// Feeds every message of a block through a full pipeline turn.
    pub fn teach(&self, session: &mut PipelineSession, messages: &[String], reflection: bool) -> Result<(), String> {
        let mut config = self.pipeline.config().clone();
        config.reflection_enabled = reflection;
        let pipeline = Pipeline::new(self.pipeline.gateway().clone(), config);
        for (i, message) in messages.iter().enumerate() {
            let outcome = pipeline.step(session, message);
            if let Some(failed) = outcome.trace.iter().find_map(|r| r.error.as_ref()) {
                return Err(format!("message {}: provider failure: {failed}", i + 1));
            }
            session.commit(message, &outcome);
        }
        Ok(())
    }

    /// Start checkpoint, then one block and one checkpoint at a time.
    pub fn run_scenario(&self, scenario: &Scenario, seed: KnowledgeState, scripts: &Scripts, bank: &[Mcq]) -> ScoreMatrix {
        let mut matrix = ScoreMatrix {
            scenario: scenario.name.clone(),
            topic: scenario.topic.clone(),
            repeats: self.repeats,
            checkpoints: Vec::new(),
            error: None,
        };
        let mut session = PipelineSession::new(seed);
        match self.checkpoint("start", &session.knowledge, bank) {
            Ok(c) => matrix.checkpoints.push(c),
            Err(e) => {
                matrix.error = Some(e.to_string());
                return matrix;
            }
        }
        for name in &scenario.blocks {
            let Some(script) = scripts.get(name) else {
                matrix.error = Some(format!("unknown script `{name}`"));
                return matrix;
            };
            if let Err(e) = self.teach(&mut session, &script.messages, script.reflection) {
                matrix.error = Some(format!("block `{name}` failed at {e}"));
                return matrix;
            }
            match self.checkpoint(&format!("after {name}"), &session.knowledge, bank) {
                Ok(c) => matrix.checkpoints.push(c),
                Err(e) => {
                    matrix.error = Some(e.to_string());
                    return matrix;
                }
            }
        }
        matrix
    }
}

/// Rough completion and token counts for a run, printed before live runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostEstimate {
    pub completions: usize,
    pub prompt_tokens: usize,
}

pub fn estimate_cost(gateway: &Gateway, bank: &[Mcq], repeats: usize, checkpoints: usize, block_messages: usize) -> CostEstimate {
    let template_chars = |name: &str| {
        gateway
            .registry()
            .get(name)
            .and_then(|t| {
                let empty = t.placeholders().iter().map(|p| (p.clone(), String::new())).collect();
                t.render(&empty).ok()
            })
            .map_or(0, |s| s.len())
    };
    use tutee_core::llm_gateway::names;
    let mcq_chars: usize = bank.iter().map(|m| m.prompt().len()).sum();
    let respond = template_chars(names::RETRIEVE) + template_chars(names::COMPOSE);
    let solve_calls = checkpoints * bank.len() * repeats * 2;
    let solve_chars = checkpoints * repeats * (bank.len() * respond + 2 * mcq_chars);
    let teach_calls = block_messages * 4;
    let teach_chars = block_messages
        * (template_chars(names::EXTRACT) + template_chars(names::UPDATE) + respond + 4 * 600);
    CostEstimate {
        completions: solve_calls + teach_calls,
        prompt_tokens: (solve_chars + teach_chars) / 4,
    }
}
