//! The append-only session event log.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use tutee_core::conversation::Phase;
use tutee_core::dialogue_taxonomy::MessageType;
use tutee_core::knowledge_state::{ChangeSet, KnowledgeState};
use tutee_core::mode_shifting::{ConversationMode, QualityVerdict};
use tutee_core::reflect_respond::Degradation;
use tutee_core::teaching_helper::FeedbackCard;

use crate::sandbox::CaseResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationEvent {
    pub index: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Which branch of the turn produced a tutee message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuteeTurn {
    Receiver,
    Question,
    FollowUp,
    Summary,
    CapExit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuteeMessage {
    pub text: String,
    pub turn: TuteeTurn,
    pub message_type: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<QualityVerdict>,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradations: Vec<Degradation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    TutorMsg {
        text: String,
        message_type: MessageType,
        #[serde(default)]
        degraded: bool,
    },
    TuteeMsg(TuteeMessage),
    FeedbackCard(FeedbackCard),
    CardSelection {
        card_id: u64,
        option: usize,
        text: String,
    },
    ModeShift {
        from: ConversationMode,
        to: ConversationMode,
    },
    PhaseAdvance {
        from: Phase,
        to: Phase,
    },
    ObjectiveDone {
        objective: usize,
    },
    TestRun {
        results: Vec<CaseResult>,
        all_passed: bool,
    },
    StateSnapshot {
        turn: u64,
        version: u64,
        state: KnowledgeState,
        changes: ChangeSet,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::TutorMsg { .. } => "tutor_msg",
            EventBody::TuteeMsg(_) => "tutee_msg",
            EventBody::FeedbackCard(_) => "feedback_card",
            EventBody::CardSelection { .. } => "card_selection",
            EventBody::ModeShift { .. } => "mode_shift",
            EventBody::PhaseAdvance { .. } => "phase_advance",
            EventBody::ObjectiveDone { .. } => "objective_done",
            EventBody::TestRun { .. } => "test_run",
            EventBody::StateSnapshot { .. } => "state_snapshot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Timestamp equals the event index; keeps logs reproducible.
    #[default]
    Logical,
    /// Milliseconds since the Unix epoch.
    System,
}

impl Clock {
    pub fn stamp(self, index: u64) -> u64 {
        match self {
            Clock::Logical => index,
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}
