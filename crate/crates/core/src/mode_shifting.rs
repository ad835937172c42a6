//! Alternation between help-receiver and questioner modes, and the
//! constructive follow-up loop run while questioning.
//!
//! [`ModeController`] is a pure state machine; [`Questioner`] makes the model
//! calls (question generation, answer quality, paraphrase, summary) and
//! degrades each of them to a fixed behaviour when the provider is down.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{render_conversation, ChatMessage, Phase};
use crate::llm_gateway::{names, Gateway};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationMode {
    HelpReceiver,
    Questioner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QualityVerdict {
    Satisfactory,
    NeedsElaboration,
    NeedsExample,
    OffTopic,
}

impl QualityVerdict {
    pub const ALL: [QualityVerdict; 4] = [
        QualityVerdict::Satisfactory,
        QualityVerdict::NeedsElaboration,
        QualityVerdict::NeedsExample,
        QualityVerdict::OffTopic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityVerdict::Satisfactory => "Satisfactory",
            QualityVerdict::NeedsElaboration => "NeedsElaboration",
            QualityVerdict::NeedsExample => "NeedsExample",
            QualityVerdict::OffTopic => "OffTopic",
        }
    }

    /// Reads a verdict from a completion; the first verdict named wins.
    pub fn parse(text: &str) -> Option<Self> {
        let norm: String = text
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Self::ALL
            .iter()
            .filter_map(|v| norm.find(&v.as_str().to_ascii_lowercase()).map(|pos| (pos, *v)))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, v)| v)
    }
}

/// Fixed follow-up texts, asked before paraphrasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowUpLadder {
    pub elaboration: String,
    pub example: String,
    /// Prefix for restating the original question; the question is appended.
    pub restatement: String,
}

impl Default for FollowUpLadder {
    fn default() -> Self {
        Self {
            elaboration: "Could you explain in more detail why that is?".into(),
            example: "Could you give me a concrete example of that?".into(),
            restatement: "Sorry, I think I missed the connection. My question was:".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeConfig {
    /// Questioner shifts happen every `period` tutee turns.
    pub period: u32,
    pub max_followups: u32,
    pub ladder: FollowUpLadder,
    /// Reply when the loop ends on the follow-up cap.
    pub cap_acknowledgment: String,
    /// Reply when the summary completion fails.
    pub summary_fallback: String,
    /// Temperature for generated questions and paraphrases.
    pub temperature: f64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self {
            period: 3,
            max_followups: 3,
            ladder: FollowUpLadder::default(),
            cap_acknowledgment: "Thanks for answering my questions. Let's get back to the problem."
                .into(),
            summary_fallback: "Thank you, I think I understand it better now.".into(),
            temperature: 0.0,
        }
    }
}

impl ModeConfig {
    pub fn validate(&self) -> Result<(), ModeError> {
        if self.period == 0 {
            return Err(ModeError::Config("period must be positive".into()));
        }
        if self.max_followups == 0 {
            return Err(ModeError::Config("max_followups must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModeError {
    #[error("invalid mode config: {0}")]
    Config(String),
    #[error("no constructive loop is active")]
    NoActiveLoop,
    #[error("a constructive loop is already active")]
    LoopActive,
    #[error("phase cannot move back from {from:?} to {to:?}")]
    PhaseRegression { from: Phase, to: Phase },
}

/// What the upcoming tutee turn should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnPlan {
    Receive,
    AskQuestion,
    /// Judge the tutor's answer to the pending question.
    Assess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum LoopAction {
    FollowUp { text: String, verdict: QualityVerdict },
    ExitWithSummary { question: String, answers: Vec<String> },
    ExitOnCap { question: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeController {
    config: ModeConfig,
    tutee_turn_counter: u64,
    followup_count: u32,
    pending_question: Option<String>,
    answers: Vec<String>,
    phase: Phase,
}

impl ModeController {
    pub fn new(config: ModeConfig) -> Result<Self, ModeError> {
        config.validate()?;
        Ok(Self {
            config,
            tutee_turn_counter: 0,
            followup_count: 0,
            pending_question: None,
            answers: Vec::new(),
            phase: Phase::ConceptCheck,
        })
    }

    pub fn config(&self) -> &ModeConfig {
        &self.config
    }

    pub fn mode(&self) -> ConversationMode {
        if self.pending_question.is_some() {
            ConversationMode::Questioner
        } else {
            ConversationMode::HelpReceiver
        }
    }

    pub fn loop_active(&self) -> bool {
        self.pending_question.is_some()
    }

    pub fn pending_question(&self) -> Option<&str> {
        self.pending_question.as_deref()
    }

    pub fn tutee_turns(&self) -> u64 {
        self.tutee_turn_counter
    }

    pub fn followup_count(&self) -> u32 {
        self.followup_count
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, to: Phase) -> Result<bool, ModeError> {
        if to < self.phase {
            return Err(ModeError::PhaseRegression { from: self.phase, to });
        }
        let changed = to != self.phase;
        self.phase = to;
        Ok(changed)
    }

    /// Counts one tutee turn and decides what it does. Call exactly once per turn.
    pub fn begin_turn(&mut self) -> TurnPlan {
        self.tutee_turn_counter += 1;
        if self.loop_active() {
            TurnPlan::Assess
        } else if self.tutee_turn_counter.is_multiple_of(u64::from(self.config.period)) {
            TurnPlan::AskQuestion
        } else {
            TurnPlan::Receive
        }
    }

    pub fn start_loop(&mut self, question: impl Into<String>) -> Result<(), ModeError> {
        if self.loop_active() {
            return Err(ModeError::LoopActive);
        }
        self.pending_question = Some(question.into());
        self.followup_count = 0;
        self.answers.clear();
        Ok(())
    }

    /// Feeds the tutor's answer and its verdict into the loop.
    pub fn on_answer(&mut self, answer: &str, verdict: QualityVerdict) -> Result<LoopAction, ModeError> {
        let question = self.pending_question.clone().ok_or(ModeError::NoActiveLoop)?;
        if verdict != QualityVerdict::OffTopic {
            self.answers.push(answer.to_string());
        }
        if verdict == QualityVerdict::Satisfactory {
            let answers = std::mem::take(&mut self.answers);
            self.end_loop();
            return Ok(LoopAction::ExitWithSummary { question, answers });
        }
        if self.followup_count >= self.config.max_followups {
            self.end_loop();
            return Ok(LoopAction::ExitOnCap { question });
        }
        self.followup_count += 1;
        let ladder = &self.config.ladder;
        let text = match verdict {
            QualityVerdict::NeedsElaboration => ladder.elaboration.clone(),
            QualityVerdict::NeedsExample => ladder.example.clone(),
            QualityVerdict::OffTopic => format!("{} {}", ladder.restatement, question),
            QualityVerdict::Satisfactory => unreachable!("handled above"),
        };
        Ok(LoopAction::FollowUp { text, verdict })
    }

    fn end_loop(&mut self) {
        self.pending_question = None;
        self.followup_count = 0;
        self.answers.clear();
    }
}

/// Answers that carry no content are judged locally without a model call.
pub fn is_non_answer(answer: &str) -> bool {
    let norm: String = answer
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
    norm.is_empty()
        || matches!(
            norm.as_str(),
            "i dont know" | "i do not know" | "idk" | "no idea" | "not sure" | "im not sure" | "dont know"
        )
}

/// A verdict and whether it came from a fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: QualityVerdict,
    pub degraded: bool,
}

/// Model-backed parts of mode shifting.
#[derive(Clone)]
pub struct Questioner {
    gateway: Gateway,
    config: ModeConfig,
}

impl Questioner {
    pub fn new(gateway: Gateway, config: ModeConfig) -> Self {
        Self { gateway, config }
    }

    /// Why/how question before discussion; a new-example question during it.
    pub fn thinking_question(
        &self,
        context: &[ChatMessage],
        phase: Phase,
        concept: &str,
    ) -> Option<String> {
        let template = match phase {
            Phase::ConceptCheck | Phase::ProblemSolving => names::DEEP_QUESTION,
            Phase::Discussion => names::THINKING_QUESTION,
        };
        let request = self
            .gateway
            .request(template)
            .temperature(self.config.temperature)
            .bind("conversation", render_conversation(context))
            .bind("concept", concept);
        match self.gateway.complete(&request) {
            Ok(c) => Some(c.text.trim().to_string()),
            Err(e) => {
                tracing::warn!(error = %e, "question generation failed; staying in receiver mode");
                None
            }
        }
    }

    pub fn assess(&self, question: &str, answer: &str, phase: Phase) -> Assessment {
        if is_non_answer(answer) {
            return Assessment {
                verdict: QualityVerdict::NeedsElaboration,
                degraded: false,
            };
        }
        let request = self
            .gateway
            .request(names::RESPONSE_QUALITY)
            .bind("phase", phase.as_str())
            .bind("question", question)
            .bind("answer", answer);
        let verdict = self
            .gateway
            .complete(&request)
            .map_err(|e| e.to_string())
            .and_then(|c| QualityVerdict::parse(&c.text).ok_or_else(|| format!("no verdict in `{}`", c.text.trim())));
        match verdict {
            Ok(verdict) => Assessment { verdict, degraded: false },
            Err(e) => {
                tracing::warn!(error = %e, "quality check unavailable; accepting the answer");
                Assessment {
                    verdict: QualityVerdict::Satisfactory,
                    degraded: true,
                }
            }
        }
    }

    pub fn paraphrase(&self, fixed_text: &str, context: &[ChatMessage]) -> String {
        let request = self
            .gateway
            .request(names::PARAPHRASE)
            .temperature(self.config.temperature)
            .bind("conversation", render_conversation(context))
            .bind("message", fixed_text);
        match self.gateway.complete(&request) {
            Ok(c) => c.text.trim().to_string(),
            Err(e) => {
                tracing::warn!(error = %e, "paraphrase failed; using the fixed text");
                fixed_text.to_string()
            }
        }
    }

    /// Summary of the accepted answers, or the configured acknowledgment.
    pub fn summarize(&self, question: &str, answers: &[String]) -> (String, bool) {
        let bullets = answers
            .iter()
            .map(|a| format!("- {}", a.trim()))
            .collect::<Vec<_>>()
            .join("\n");
        let request = self
            .gateway
            .request(names::SUMMARIZE)
            .bind("question", question)
            .bind("answers", bullets);
        match self.gateway.complete(&request) {
            Ok(c) => (c.text.trim().to_string(), false),
            Err(e) => {
                tracing::warn!(error = %e, "summary failed; acknowledging instead");
                (self.config.summary_fallback.clone(), true)
            }
        }
    }

    pub fn config(&self) -> &ModeConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller() -> ModeController {
        ModeController::new(ModeConfig::default()).unwrap()
    }

    #[test]
    fn schedule_follows_period() {
        let mut c = controller();
        let plans: Vec<_> = (0..6).map(|_| c.begin_turn()).collect();
        assert_eq!(
            plans,
            [
                TurnPlan::Receive,
                TurnPlan::Receive,
                TurnPlan::AskQuestion,
                TurnPlan::Receive,
                TurnPlan::Receive,
                TurnPlan::AskQuestion
            ]
        );
    }

    #[test]
    fn ladder_then_exit() {
        let mut c = controller();
        c.start_loop("Why sorted?").unwrap();
        assert_eq!(c.mode(), ConversationMode::Questioner);
        let a = c.on_answer("it is faster", QualityVerdict::NeedsElaboration).unwrap();
        assert_eq!(
            a,
            LoopAction::FollowUp {
                text: "Could you explain in more detail why that is?".into(),
                verdict: QualityVerdict::NeedsElaboration
            }
        );
        let a = c.on_answer("weather", QualityVerdict::OffTopic).unwrap();
        assert!(matches!(a, LoopAction::FollowUp { ref text, .. } if text.ends_with("Why sorted?")));
        let a = c
            .on_answer("because halves are discarded", QualityVerdict::Satisfactory)
            .unwrap();
        assert_eq!(
            a,
            LoopAction::ExitWithSummary {
                question: "Why sorted?".into(),
                answers: vec!["it is faster".into(), "because halves are discarded".into()]
            }
        );
        assert_eq!(c.mode(), ConversationMode::HelpReceiver);
        assert_eq!(c.followup_count(), 0);
    }

    #[test]
    fn cap_exit_after_max_followups() {
        let mut c = controller();
        c.start_loop("q").unwrap();
        for _ in 0..3 {
            assert!(matches!(
                c.on_answer("x", QualityVerdict::NeedsExample).unwrap(),
                LoopAction::FollowUp { .. }
            ));
        }
        assert_eq!(
            c.on_answer("x", QualityVerdict::NeedsExample).unwrap(),
            LoopAction::ExitOnCap { question: "q".into() }
        );
        assert_eq!(c.on_answer("x", QualityVerdict::Satisfactory), Err(ModeError::NoActiveLoop));
    }

    #[test]
    fn scheduled_shift_during_loop_is_deferred() {
        let mut c = controller();
        c.begin_turn();
        c.begin_turn();
        assert_eq!(c.begin_turn(), TurnPlan::AskQuestion);
        c.start_loop("q").unwrap();
        for _ in 0..3 {
            assert_eq!(c.begin_turn(), TurnPlan::Assess);
            c.on_answer("x", QualityVerdict::NeedsElaboration).unwrap();
        }
        assert_eq!(c.tutee_turns(), 6);
        assert_eq!(c.begin_turn(), TurnPlan::Assess);
        c.on_answer("x", QualityVerdict::NeedsElaboration).unwrap();
        assert_eq!(c.begin_turn(), TurnPlan::Receive);
        assert_eq!(c.begin_turn(), TurnPlan::AskQuestion);
    }

    #[test]
    fn phase_is_monotone() {
        let mut c = controller();
        assert_eq!(c.set_phase(Phase::Discussion), Ok(true));
        assert!(c.set_phase(Phase::ProblemSolving).is_err());
        assert_eq!(c.set_phase(Phase::Discussion), Ok(false));
    }

    #[test]
    fn verdict_parsing_and_non_answers() {
        assert_eq!(QualityVerdict::parse("Needs elaboration."), Some(QualityVerdict::NeedsElaboration));
        assert_eq!(QualityVerdict::parse("VERDICT: OffTopic"), Some(QualityVerdict::OffTopic));
        assert_eq!(QualityVerdict::parse("hmm"), None);
        assert!(is_non_answer("  "));
        assert!(is_non_answer("I don't know."));
        assert!(!is_non_answer("Because the list is sorted."));
    }

    #[test]
    fn zero_period_is_rejected() {
        let cfg = ModeConfig {
            period: 0,
            ..ModeConfig::default()
        };
        assert!(ModeController::new(cfg).is_err());
    }
}
