//! Antipattern detection over recent classified messages and the feedback
//! cards shown to the tutor.
//!
//! A card is considered at most once every `cooldown` messages. Red cards
//! (commanding, spoon-feeding) block the next tutor message until one of their
//! options is picked; green cards are advisory.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::Role;
use crate::dialogue_taxonomy::{Category, MessageType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Antipattern {
    Commanding,
    SpoonFeeding,
    UnderTeaching,
    NoneDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Red,
    Green,
}

impl Antipattern {
    pub fn severity(self) -> Severity {
        match self {
            Antipattern::Commanding | Antipattern::SpoonFeeding => Severity::Red,
            Antipattern::UnderTeaching | Antipattern::NoneDetected => Severity::Green,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedMessage {
    pub role: Role,
    pub message_type: MessageType,
    #[serde(default)]
    pub degraded: bool,
}

impl ClassifiedMessage {
    pub fn new(role: Role, message_type: MessageType) -> Self {
        Self {
            role,
            message_type,
            degraded: false,
        }
    }
}

/// Classifies a window; rules are checked in priority order.
pub fn detect(window: &[ClassifiedMessage]) -> Antipattern {
    use MessageType::*;
    if window.iter().any(|m| m.degraded) {
        return Antipattern::NoneDetected;
    }
    let tutor: Vec<MessageType> = window
        .iter()
        .filter(|m| m.role == Role::Tutor)
        .map(|m| m.message_type)
        .collect();
    let prompting = tutor.iter().filter(|t| t.category() == Category::Prompting).count();
    let instructing = tutor
        .iter()
        .filter(|t| matches!(t, InstructionFixing | InstructionCommanding))
        .count();
    let telling = tutor.iter().filter(|t| **t == StatementComprehension).count();

    if instructing >= 2 && prompting == 0 {
        return Antipattern::Commanding;
    }
    if telling >= 2 && prompting == 0 {
        return Antipattern::SpoonFeeding;
    }
    let tutor_passive = !tutor.is_empty()
        && tutor.iter().all(|t| {
            matches!(
                t,
                InstructionCommanding
                    | InstructionEncouraging
                    | StatementFeedback
                    | StatementAcceptingReject
                    | Miscellaneous
            )
        });
    let tutee_progress = window
        .iter()
        .any(|m| m.role == Role::Tutee && m.message_type == StatementComprehension);
    if tutor_passive && tutee_progress {
        return Antipattern::UnderTeaching;
    }
    Antipattern::NoneDetected
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardText {
    pub body: String,
    #[serde(default)]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HelperConfig {
    /// Minimum number of messages between two cards.
    pub cooldown: usize,
    pub commanding: CardText,
    pub spoon_feeding: CardText,
    pub under_teaching: CardText,
    /// Rotated round-robin when no antipattern is found.
    pub tips: Vec<String>,
}

impl Default for HelperConfig {
    fn default() -> Self {
        Self {
            cooldown: 6,
            commanding: CardText {
                body: "You have been telling the tutee exactly what to type. Explaining the reasons behind each step helps you both learn more.".into(),
                options: vec![
                    "Explain why the change is needed".into(),
                    "Ask the tutee how they would fix it".into(),
                    "Ask a question to check the tutee's understanding".into(),
                ],
            },
            spoon_feeding: CardText {
                body: "You have been giving away explanations without checking what the tutee understood.".into(),
                options: vec![
                    "Ask the tutee to explain it back in their own words".into(),
                    "Ask a question that makes the tutee think".into(),
                    "Give a hint instead of the answer".into(),
                ],
            },
            under_teaching: CardText {
                body: "The tutee is making progress on its own. Try going deeper: ask why its approach works or connect it to another problem.".into(),
                options: Vec::new(),
            },
            tips: vec![
                "Good explanations say why, not only what. Try adding a reason to your next message.".into(),
                "Ask the tutee to predict what the code will do before running it.".into(),
                "Relate the idea to something the tutee already knows.".into(),
                "When the tutee makes a mistake, ask a question that leads them to notice it.".into(),
                "Use a small concrete example to check the tutee's understanding.".into(),
            ],
        }
    }
}

impl HelperConfig {
    pub fn validate(&self) -> Result<(), HelperError> {
        if self.cooldown == 0 {
            return Err(HelperError::Config("cooldown must be positive".into()));
        }
        for (name, card) in [("commanding", &self.commanding), ("spoon_feeding", &self.spoon_feeding)] {
            if !(2..=3).contains(&card.options.len()) {
                return Err(HelperError::Config(format!("{name} card needs 2 or 3 options")));
            }
        }
        if self.tips.is_empty() {
            return Err(HelperError::Config("tip list is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackCard {
    pub id: u64,
    pub pattern: Antipattern,
    pub severity: Severity,
    pub body: String,
    pub options: Vec<String>,
    pub selected: Option<usize>,
    pub requires_selection: bool,
    /// Number of messages observed when the card was issued.
    pub message_index: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HelperError {
    #[error("invalid helper config: {0}")]
    Config(String),
    #[error("option {index} is out of range for a card with {options} options")]
    OptionOutOfRange { index: usize, options: usize },
    #[error("no card is waiting for a selection")]
    NoPendingCard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateOutcome {
    Admit { selected: Option<FeedbackCard> },
    Reject { card: FeedbackCard },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingHelper {
    config: HelperConfig,
    window: VecDeque<ClassifiedMessage>,
    messages_since_last_card: usize,
    messages_seen: usize,
    pending_card: Option<FeedbackCard>,
    next_card_id: u64,
    last_tip: Option<usize>,
}

impl TeachingHelper {
    pub fn new(config: HelperConfig) -> Result<Self, HelperError> {
        config.validate()?;
        Ok(Self {
            config,
            window: VecDeque::new(),
            messages_since_last_card: 0,
            messages_seen: 0,
            pending_card: None,
            next_card_id: 1,
            last_tip: None,
        })
    }

    pub fn config(&self) -> &HelperConfig {
        &self.config
    }

    pub fn pending_card(&self) -> Option<&FeedbackCard> {
        self.pending_card.as_ref()
    }

    pub fn messages_seen(&self) -> usize {
        self.messages_seen
    }

    /// Decides whether an incoming tutor message may go through.
    pub fn gate(&mut self, selection: Option<usize>) -> Result<GateOutcome, HelperError> {
        match (&self.pending_card, selection) {
            (Some(card), None) => Ok(GateOutcome::Reject { card: card.clone() }),
            (Some(card), Some(index)) => {
                if index >= card.options.len() {
                    return Err(HelperError::OptionOutOfRange {
                        index,
                        options: card.options.len(),
                    });
                }
                let mut card = self.pending_card.take().expect("checked above");
                card.selected = Some(index);
                Ok(GateOutcome::Admit { selected: Some(card) })
            }
            (None, Some(_)) => Err(HelperError::NoPendingCard),
            (None, None) => Ok(GateOutcome::Admit { selected: None }),
        }
    }

    /// Records a message; after a tutor message past the cooldown, issues a card.
    pub fn observe(&mut self, message: ClassifiedMessage) -> Option<FeedbackCard> {
        self.messages_seen += 1;
        self.messages_since_last_card += 1;
        self.window.push_back(message);
        while self.window.len() > self.config.cooldown {
            self.window.pop_front();
        }
        if message.role != Role::Tutor
            || self.messages_since_last_card < self.config.cooldown
            || self.pending_card.is_some()
        {
            return None;
        }
        let window: Vec<_> = self.window.iter().copied().collect();
        let card = self.make_card(detect(&window));
        self.messages_since_last_card = 0;
        if card.requires_selection {
            self.pending_card = Some(card.clone());
        }
        Some(card)
    }

    fn make_card(&mut self, pattern: Antipattern) -> FeedbackCard {
        let (body, options) = match pattern {
            Antipattern::Commanding => (self.config.commanding.body.clone(), self.config.commanding.options.clone()),
            Antipattern::SpoonFeeding => (
                self.config.spoon_feeding.body.clone(),
                self.config.spoon_feeding.options.clone(),
            ),
            Antipattern::UnderTeaching => (self.config.under_teaching.body.clone(), Vec::new()),
            Antipattern::NoneDetected => (self.next_tip(), Vec::new()),
        };
        let severity = pattern.severity();
        let id = self.next_card_id;
        self.next_card_id += 1;
        FeedbackCard {
            id,
            pattern,
            severity,
            body,
            options,
            selected: None,
            requires_selection: severity == Severity::Red,
            message_index: self.messages_seen,
        }
    }

    fn next_tip(&mut self) -> String {
        let n = self.config.tips.len();
        let index = self.last_tip.map_or(0, |i| (i + 1) % n);
        self.last_tip = Some(index);
        self.config.tips[index].clone()
    }
}
