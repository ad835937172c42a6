//! One tutoring session: turn orchestration, objectives, test runs and
//! transcript export. Every operation returns the events it appended.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tutee_core::conversation::{tail, ChatMessage, Phase, Role};
use tutee_core::dialogue_taxonomy::{
    AnnotatedMessage, Classification, Classifier, KeywordClassifier, PromptedClassifier,
};
use tutee_core::knowledge_state::{diff_with_threshold, KnowledgeState};
use tutee_core::llm_gateway::{Backend, Gateway};
use tutee_core::mode_shifting::{
    ConversationMode, LoopAction, ModeController, ModeError, Questioner, TurnPlan,
};
use tutee_core::reflect_respond::{snippet_body, Degradation, Pipeline, PipelineSession, Trace};
use tutee_core::teaching_helper::{ClassifiedMessage, FeedbackCard, GateOutcome, HelperError, TeachingHelper};

use crate::config::{ClassifierKind, Persona, SessionConfig};
use crate::events::{Clock, ConversationEvent, EventBody, TuteeMessage, TuteeTurn};
use crate::sandbox::{CaseResult, Sandbox, SandboxError, Verdict};

pub const OBJECTIVE_COUNT: usize = 3;
/// The problem-solving objective; completed only by passing every test case.
pub const TEST_GATED_OBJECTIVE: usize = 2;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("a feedback card needs an answer before the next message")]
    Gated { card: FeedbackCard },
    #[error(transparent)]
    Helper(#[from] HelperError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error("objective {0} does not exist")]
    UnknownObjective(usize),
    #[error("objective {requested} cannot be completed before objective {first_open}")]
    OutOfOrder { requested: usize, first_open: usize },
    #[error("objective {0} is already done")]
    AlreadyDone(usize),
    #[error("objective 2 is completed by passing every test case")]
    TestGated,
    #[error("the tutee has no code to run")]
    NoCode,
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("message text is empty")]
    EmptyMessage,
}

/// Everything a session needs besides its own state.
pub struct Services {
    pub config: SessionConfig,
    pub pipeline: Pipeline,
    pub questioner: Questioner,
    pub classifier: Box<dyn Classifier>,
    pub sandbox: Arc<Sandbox>,
    pub clock: Clock,
}

impl Services {
    pub fn new(config: SessionConfig, backend: Arc<dyn Backend>, sandbox: Arc<Sandbox>, clock: Clock) -> Self {
        let gateway = Gateway::new(config.templates.clone(), backend).with_defaults(config.gateway);
        let classifier: Box<dyn Classifier> = match config.classifier.kind {
            ClassifierKind::Prompted => Box::new(
                PromptedClassifier::new(gateway.clone()).with_context_window(config.classifier.context_window),
            ),
            ClassifierKind::Keyword => Box::new(KeywordClassifier),
        };
        Self {
            pipeline: Pipeline::new(gateway.clone(), config.pipeline.clone()),
            questioner: Questioner::new(gateway, config.mode.clone()),
            classifier,
            sandbox,
            clock,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub text: String,
    pub done: bool,
}

/// Phase implied by how many objectives are done.
pub fn phase_for(done: usize) -> Phase {
    match done {
        0 => Phase::ConceptCheck,
        1 => Phase::ProblemSolving,
        _ => Phase::Discussion,
    }
}

/// Session state that survives restarts. The event log is stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub config: String,
    pub phase: Phase,
    pub objectives: Vec<Objective>,
    pub persona: Persona,
    pub knowledge: PipelineSession,
    pub controller: ModeController,
    pub helper: Option<TeachingHelper>,
    /// Completed turns; equals the number of snapshots after #0.
    pub turns: u64,
    pub next_index: u64,
    #[serde(skip)]
    pub events: Vec<ConversationEvent>,
}

impl SessionState {
    pub fn completed(&self) -> bool {
        self.objectives.iter().all(|o| o.done)
    }

    pub fn mode(&self) -> ConversationMode {
        self.controller.mode()
    }

    pub fn pending_card(&self) -> Option<&FeedbackCard> {
        self.helper.as_ref().and_then(|h| h.pending_card())
    }
}

/// A session bound to its services.
pub struct Session {
    pub state: SessionState,
    services: Arc<Services>,
}

/// Events gathered during one operation; committed only on success.
struct Batch {
    clock: Clock,
    next: u64,
    events: Vec<ConversationEvent>,
}

impl Batch {
    fn push(&mut self, body: EventBody) {
        self.events.push(ConversationEvent {
            index: self.next,
            timestamp: self.clock.stamp(self.next),
            body,
        });
        self.next += 1;
    }
}

impl Session {
    pub fn create(id: impl Into<String>, services: Arc<Services>) -> Result<(Self, Vec<ConversationEvent>), SessionError> {
        let cfg = &services.config;
        let helper = if cfg.features.teaching_helper {
            Some(TeachingHelper::new(cfg.helper.clone())?)
        } else {
            None
        };
        let state = SessionState {
            id: id.into(),
            config: cfg.name.clone(),
            phase: Phase::ConceptCheck,
            objectives: cfg
                .objectives
                .iter()
                .map(|t| Objective {
                    text: t.clone(),
                    done: false,
                })
                .collect(),
            persona: cfg.persona.clone(),
            knowledge: PipelineSession::new(cfg.seed_state.clone()),
            controller: ModeController::new(cfg.mode.clone())?,
            helper,
            turns: 0,
            next_index: 0,
            events: Vec::new(),
        };
        let mut session = Self { state, services };
        let mut batch = session.batch();
        batch.push(EventBody::StateSnapshot {
            turn: 0,
            version: 0,
            state: session.state.knowledge.knowledge.clone(),
            changes: Default::default(),
        });
        let events = session.finish(batch);
        Ok((session, events))
    }

    /// Rebinds persisted state to services.
    pub fn restore(state: SessionState, services: Arc<Services>) -> Self {
        Self { state, services }
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }

    pub fn config(&self) -> &SessionConfig {
        &self.services.config
    }

    fn batch(&self) -> Batch {
        Batch {
            clock: self.services.clock,
            next: self.state.next_index,
            events: Vec::new(),
        }
    }

    fn finish(&mut self, batch: Batch) -> Vec<ConversationEvent> {
        self.state.next_index = batch.next;
        self.state.events.extend(batch.events.iter().cloned());
        batch.events
    }

    fn classify(&self, message: &ChatMessage, context: &[ChatMessage]) -> Classification {
        self.services.classifier.classify(message, context)
    }

    /// One tutor message and the tutee's reply.
    pub fn post_message(&mut self, text: &str, selection: Option<usize>) -> Result<Vec<ConversationEvent>, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let mut batch = self.batch();

        match self.state.helper.as_mut() {
            Some(helper) => match helper.gate(selection)? {
                GateOutcome::Reject { card } => return Err(SessionError::Gated { card }),
                GateOutcome::Admit { selected: Some(card) } => {
                    let option = card.selected.expect("admitted cards carry a selection");
                    batch.push(EventBody::CardSelection {
                        card_id: card.id,
                        option,
                        text: card.options[option].clone(),
                    });
                }
                GateOutcome::Admit { selected: None } => {}
            },
            None if selection.is_some() => return Err(HelperError::NoPendingCard.into()),
            None => {}
        }

        let tutor = ChatMessage::tutor(text);
        let tutor_class = self.classify(&tutor, &self.state.knowledge.history);
        batch.push(EventBody::TutorMsg {
            text: text.to_string(),
            message_type: tutor_class.message_type,
            degraded: tutor_class.degraded,
        });
        if let Some(helper) = self.state.helper.as_mut() {
            let observed = ClassifiedMessage {
                role: Role::Tutor,
                message_type: tutor_class.message_type,
                degraded: tutor_class.degraded,
            };
            if let Some(card) = helper.observe(observed) {
                batch.push(EventBody::FeedbackCard(card));
            }
        }

        let mut history = self.state.knowledge.history.clone();
        history.push(tutor);
        let old = self.state.knowledge.knowledge.clone();
        let reply = self.tutee_turn(&history, &mut batch)?;

        let tutee = ChatMessage::tutee(reply.message.text.clone());
        let tutee_class = self.classify(&tutee, &history);
        let mut message = reply.message;
        message.message_type = tutee_class.message_type;
        if let Some(helper) = self.state.helper.as_mut() {
            // Cards are only issued on tutor messages, so this never yields one.
            let _ = helper.observe(ClassifiedMessage {
                role: Role::Tutee,
                message_type: tutee_class.message_type,
                degraded: tutee_class.degraded,
            });
        }
        batch.push(EventBody::TuteeMsg(message));
        for body in reply.after {
            batch.push(body);
        }

        history.push(tutee);
        let knowledge = &mut self.state.knowledge;
        if reply.state != knowledge.knowledge {
            knowledge.version += 1;
        }
        knowledge.knowledge = reply.state;
        knowledge.history = history;
        self.state.turns += 1;
        batch.push(EventBody::StateSnapshot {
            turn: self.state.turns,
            version: knowledge.version,
            changes: diff_with_threshold(&old, &knowledge.knowledge, self.services.config.pipeline.edit_similarity),
            state: knowledge.knowledge.clone(),
        });
        Ok(self.finish(batch))
    }

    fn tutee_turn(&mut self, history: &[ChatMessage], batch: &mut Batch) -> Result<Reply, SessionError> {
        let services = Arc::clone(&self.services);
        let pipeline = &services.pipeline;
        let state = &self.state.knowledge.knowledge.clone();
        let plan = if services.config.features.mode_shifting {
            self.state.controller.begin_turn()
        } else {
            TurnPlan::Receive
        };
        let mut trace = Trace::new();
        let reflect = |state: &KnowledgeState, history: &[ChatMessage], trace: &mut Trace| {
            if pipeline.config().reflection_enabled {
                let r = pipeline.reflect(state, history, trace);
                (r.state, r.degradations)
            } else {
                (state.clone(), Vec::new())
            }
        };
        let context_len = pipeline.config().reflection_window;
        let phase = self.state.phase;

        let reply = match plan {
            TurnPlan::Receive => receive(pipeline, state, history, &mut trace),
            TurnPlan::AskQuestion => {
                let (reflected, mut degradations) = reflect(state, history, &mut trace);
                match services
                    .questioner
                    .thinking_question(tail(history, context_len), phase, &services.config.concept)
                {
                    Some(question) => {
                        self.state.controller.start_loop(question.clone())?;
                        batch.push(EventBody::ModeShift {
                            from: ConversationMode::HelpReceiver,
                            to: ConversationMode::Questioner,
                        });
                        Reply::new(reflected, question, TuteeTurn::Question, degradations)
                    }
                    None => {
                        let response = pipeline.respond(&reflected, history, &mut trace);
                        degradations.extend(response.degradations);
                        let fallback = response.bundle.is_empty();
                        let mut r = Reply::new(reflected, response.reply, TuteeTurn::Receiver, degradations);
                        r.message.fallback = fallback;
                        r.message.notes.push("question generation failed".into());
                        r
                    }
                }
            }
            TurnPlan::Assess => {
                let question = self
                    .state
                    .controller
                    .pending_question()
                    .expect("assess only runs inside a loop")
                    .to_string();
                let answer = &history.last().expect("tutor message was pushed").text;
                let (reflected, degradations) = reflect(state, history, &mut trace);
                let assessment = services.questioner.assess(&question, answer, phase);
                let action = self.state.controller.on_answer(answer, assessment.verdict)?;
                let back = EventBody::ModeShift {
                    from: ConversationMode::Questioner,
                    to: ConversationMode::HelpReceiver,
                };
                let mut r = match action {
                    LoopAction::FollowUp { text, .. } => {
                        let text = services.questioner.paraphrase(&text, tail(history, context_len));
                        Reply::new(reflected, text, TuteeTurn::FollowUp, degradations)
                    }
                    LoopAction::ExitWithSummary { question, answers } => {
                        let (summary, degraded) = services.questioner.summarize(&question, &answers);
                        let mut with_summary = history.to_vec();
                        with_summary.push(ChatMessage::tutee(summary.clone()));
                        let (settled, mut more) = reflect(&reflected, &with_summary, &mut trace);
                        let mut all = degradations;
                        all.append(&mut more);
                        let mut r = Reply::new(settled, summary, TuteeTurn::Summary, all);
                        if degraded {
                            r.message.notes.push("summary unavailable".into());
                        }
                        r.after.push(back);
                        r
                    }
                    LoopAction::ExitOnCap { .. } => {
                        let text = services.config.mode.cap_acknowledgment.clone();
                        let mut r = Reply::new(reflected, text, TuteeTurn::CapExit, degradations);
                        r.after.push(back);
                        r
                    }
                };
                r.message.verdict = Some(assessment.verdict);
                if assessment.degraded {
                    r.message.notes.push("quality check unavailable".into());
                }
                r
            }
        };
        for record in &trace {
            tracing::debug!(stage = ?record.stage, error = ?record.error, "pipeline call");
        }
        Ok(reply)
    }

    /// Assembles the tutee's code into the harness and runs every test case.
    pub fn run_tests(&mut self) -> Result<(Vec<CaseResult>, Vec<ConversationEvent>), SessionError> {
        let program = self.program()?;
        let problem = &self.services.config.problem;
        let results = self.services.sandbox.run_cases(&program, &problem.tests)?;
        let all_passed = results.iter().all(|r| r.verdict == Verdict::Pass);
        let mut batch = self.batch();
        batch.push(EventBody::TestRun {
            results: results.clone(),
            all_passed,
        });
        if all_passed && !self.state.objectives[TEST_GATED_OBJECTIVE - 1].done {
            for k in 1..=TEST_GATED_OBJECTIVE {
                if !self.state.objectives[k - 1].done {
                    self.complete(k, &mut batch);
                }
            }
        }
        Ok((results, self.finish(batch)))
    }

    /// The runnable program built from the current code snippets.
    pub fn program(&self) -> Result<String, SessionError> {
        let code = self.state.knowledge.knowledge.code_implementation();
        if code.is_empty() {
            return Err(SessionError::NoCode);
        }
        let joined = code.iter().map(|s| snippet_body(s)).collect::<Vec<_>>().join("\n\n");
        Ok(self.services.config.problem.assemble(&joined))
    }

    /// Learner-declared completion of objective `k` (1-based).
    pub fn advance_objective(&mut self, k: usize) -> Result<Vec<ConversationEvent>, SessionError> {
        if k == 0 || k > self.state.objectives.len() {
            return Err(SessionError::UnknownObjective(k));
        }
        if self.state.objectives[k - 1].done {
            return Err(SessionError::AlreadyDone(k));
        }
        let first_open = self
            .state
            .objectives
            .iter()
            .position(|o| !o.done)
            .map_or(OBJECTIVE_COUNT + 1, |i| i + 1);
        if k != first_open {
            return Err(SessionError::OutOfOrder { requested: k, first_open });
        }
        if k == TEST_GATED_OBJECTIVE {
            return Err(SessionError::TestGated);
        }
        let mut batch = self.batch();
        self.complete(k, &mut batch);
        Ok(self.finish(batch))
    }

    fn complete(&mut self, k: usize, batch: &mut Batch) {
        self.state.objectives[k - 1].done = true;
        batch.push(EventBody::ObjectiveDone { objective: k });
        let done = self.state.objectives.iter().filter(|o| o.done).count();
        let to = phase_for(done);
        let from = self.state.phase;
        if to > from {
            self.state.phase = to;
            // Phase only moves forward here, so the controller accepts it.
            let _ = self.state.controller.set_phase(to);
            batch.push(EventBody::PhaseAdvance { from, to });
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript::build(&self.state)
    }
}

fn receive(pipeline: &Pipeline, state: &KnowledgeState, history: &[ChatMessage], trace: &mut Trace) -> Reply {
    let session = PipelineSession {
        knowledge: state.clone(),
        history: history[..history.len() - 1].to_vec(),
        version: 0,
    };
    let tutor_text = &history.last().expect("tutor message was pushed").text;
    let outcome = pipeline.step(&session, tutor_text);
    trace.extend(outcome.trace);
    let mut r = Reply::new(outcome.state, outcome.reply, TuteeTurn::Receiver, outcome.degradations);
    r.message.fallback = outcome.fallback;
    r
}

struct Reply {
    state: KnowledgeState,
    message: TuteeMessage,
    /// Events that follow the tutee message.
    after: Vec<EventBody>,
}

impl Reply {
    fn new(state: KnowledgeState, text: String, turn: TuteeTurn, degradations: Vec<Degradation>) -> Self {
        Self {
            state,
            message: TuteeMessage {
                text,
                turn,
                message_type: tutee_core::dialogue_taxonomy::MessageType::Miscellaneous,
                verdict: None,
                fallback: false,
                degradations,
                notes: Vec::new(),
            },
            after: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub id: String,
    pub config: String,
    pub persona: Persona,
    pub phase: Phase,
    pub objectives: Vec<Objective>,
    pub turns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub turn: u64,
    pub version: u64,
    pub state: KnowledgeState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardSelection {
    pub card_id: u64,
    pub option: usize,
    pub text: String,
}

/// Everything recorded in a session, with the chat in annotated form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub messages: Vec<AnnotatedMessage>,
    pub snapshots: Vec<Snapshot>,
    pub card_selections: Vec<CardSelection>,
    pub events: Vec<ConversationEvent>,
}

impl Transcript {
    pub fn build(state: &SessionState) -> Self {
        let mut phase = Phase::ConceptCheck;
        let mut messages = Vec::new();
        let mut snapshots = Vec::new();
        let mut card_selections = Vec::new();
        for e in &state.events {
            match &e.body {
                EventBody::PhaseAdvance { to, .. } => phase = *to,
                EventBody::TutorMsg { text, message_type, .. } => messages.push(AnnotatedMessage {
                    index: messages.len(),
                    role: Role::Tutor,
                    text: text.clone(),
                    message_type: *message_type,
                    phase: Some(phase),
                }),
                EventBody::TuteeMsg(m) => messages.push(AnnotatedMessage {
                    index: messages.len(),
                    role: Role::Tutee,
                    text: m.text.clone(),
                    message_type: m.message_type,
                    phase: Some(phase),
                }),
                EventBody::StateSnapshot { turn, version, state, .. } => snapshots.push(Snapshot {
                    turn: *turn,
                    version: *version,
                    state: state.clone(),
                }),
                EventBody::CardSelection { card_id, option, text } => card_selections.push(CardSelection {
                    card_id: *card_id,
                    option: *option,
                    text: text.clone(),
                }),
                _ => {}
            }
        }
        Self {
            header: TranscriptHeader {
                id: state.id.clone(),
                config: state.config.clone(),
                persona: state.persona.clone(),
                phase: state.phase,
                objectives: state.objectives.clone(),
                turns: state.turns,
            },
            messages,
            snapshots,
            card_selections,
            events: state.events.clone(),
        }
    }
}
