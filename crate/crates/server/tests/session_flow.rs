mod common;

use tutee_core::conversation::Phase;
use tutee_core::mode_shifting::ConversationMode;
use tutee_server::engine::{Session, SessionError};
use tutee_server::events::{EventBody, TuteeTurn};

fn kinds(events: &[tutee_server::ConversationEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.body.kind()).collect()
}

#[test]
fn fresh_session_has_only_snapshot_zero() {
    let (session, events) = Session::create("s", common::services(common::config("teachyou"))).unwrap();
    assert_eq!(kinds(&events), ["state_snapshot"]);
    assert_eq!(session.state.phase, Phase::ConceptCheck);
    let t = session.transcript();
    assert!(t.messages.is_empty());
    assert_eq!(t.snapshots.len(), 1);
    assert_eq!(t.snapshots[0].turn, 0);
}

#[test]
fn receiver_turn_emits_tutee_message_and_snapshot() {
    let (mut session, _) = Session::create("s", common::services(common::config("baseline"))).unwrap();
    let events = session.post_message("The list has to be sorted before you search it.", None).unwrap();
    assert_eq!(kinds(&events), ["tutor_msg", "tutee_msg", "state_snapshot"]);
    assert!(events.windows(2).all(|w| w[0].index < w[1].index));
}

#[test]
fn third_turn_shifts_to_questioner() {
    let (mut session, _) = Session::create("s", common::services(common::config("teachyou"))).unwrap();
    for text in ["Hi Pip!", "Binary search needs a sorted list.", "The middle index is (low + high) // 2."] {
        let events = session.post_message(text, None);
        let events = match events {
            Ok(e) => e,
            Err(SessionError::Gated { .. }) => unreachable!("no card before the cooldown"),
            Err(e) => panic!("{e}"),
        };
        if text.starts_with("The middle") {
            let shift = events.iter().position(|e| matches!(e.body, EventBody::ModeShift { to: ConversationMode::Questioner, .. }));
            let question = events.iter().position(|e| matches!(&e.body, EventBody::TuteeMsg(m) if m.turn == TuteeTurn::Question));
            assert!(shift.is_some() && question.is_some());
            assert!(shift < question);
        }
    }
    assert_eq!(session.state.mode(), ConversationMode::Questioner);
}

#[test]
fn baseline_never_shifts_or_issues_cards() {
    let (mut session, _) = Session::create("s", common::services(common::config("baseline"))).unwrap();
    for i in 0..12 {
        let events = session.post_message(&format!("Change line {i} to low = mid + 1."), None).unwrap();
        assert!(events
            .iter()
            .all(|e| !matches!(e.body, EventBody::ModeShift { .. } | EventBody::FeedbackCard(_))));
    }
    assert_eq!(session.state.turns, 12);
}

#[test]
fn snapshots_count_completed_turns() {
    let (mut session, _) = Session::create("s", common::services(common::config("baseline"))).unwrap();
    for _ in 0..5 {
        session.post_message("Set high to mid - 1 when the middle value is too big.", None).unwrap();
    }
    let t = session.transcript();
    assert_eq!(t.snapshots.len(), 6);
    assert_eq!(t.messages.iter().filter(|m| m.role == tutee_core::conversation::Role::Tutee).count(), 5);
    let last = t.snapshots.last().unwrap();
    assert_eq!(last.state, session.state.knowledge.knowledge);
}

#[test]
fn objectives_complete_in_order_and_objective_two_is_test_gated() {
    let (mut session, _) = Session::create("s", common::services(common::config("teachyou"))).unwrap();
    assert!(matches!(session.advance_objective(3), Err(SessionError::OutOfOrder { requested: 3, first_open: 1 })));
    let events = session.advance_objective(1).unwrap();
    assert_eq!(kinds(&events), ["objective_done", "phase_advance"]);
    assert_eq!(session.state.phase, Phase::ProblemSolving);
    assert!(matches!(session.advance_objective(2), Err(SessionError::TestGated)));
    assert!(matches!(session.advance_objective(1), Err(SessionError::AlreadyDone(1))));
    assert!(matches!(session.advance_objective(4), Err(SessionError::UnknownObjective(4))));
}

#[test]
fn passing_tests_complete_objective_two_and_open_discussion() {
    let mut cfg = common::config("teachyou");
    cfg.seed_state = common::solved_seed(&cfg);
    let (mut session, _) = Session::create("s", common::services(cfg)).unwrap();
    session.advance_objective(1).unwrap();
    let (results, events) = session.run_tests().unwrap();
    assert!(!results.is_empty());
    assert!(results.iter().all(|r| r.verdict == tutee_server::sandbox::Verdict::Pass), "{results:?}");
    assert_eq!(kinds(&events), ["test_run", "objective_done", "phase_advance"]);
    assert_eq!(session.state.phase, Phase::Discussion);
    session.advance_objective(3).unwrap();
    assert!(session.state.completed());
}

#[test]
fn starter_code_fails_the_tests() {
    let mut cfg = common::config("teachyou");
    // The starter loop never narrows its range, so most cases time out.
    cfg.sandbox.time_limit = std::time::Duration::from_millis(300);
    let (mut session, _) = Session::create("s", common::services(cfg)).unwrap();
    let (results, events) = session.run_tests().unwrap();
    assert!(results.iter().any(|r| r.verdict == tutee_server::sandbox::Verdict::Timeout));
    assert_eq!(kinds(&events), ["test_run"]);
    assert!(!session.state.objectives[1].done);
}

#[test]
fn running_tests_without_code_is_an_error() {
    let mut cfg = common::config("teachyou");
    cfg.seed_state = Default::default();
    let (mut session, _) = Session::create("s", common::services(cfg)).unwrap();
    assert!(matches!(session.run_tests(), Err(SessionError::NoCode)));
}

#[test]
fn commanding_tutor_gets_a_blocking_card() {
    let (mut session, _) = Session::create("s", common::services(common::config("teachyou"))).unwrap();
    let mut card = None;
    for text in ["Change low to mid + 1.", "Fix the else branch.", "Write the entire code.", "Delete that line."] {
        let events = session.post_message(text, None).unwrap();
        card = card.or(events.iter().find_map(|e| match &e.body {
            EventBody::FeedbackCard(c) => Some(c.clone()),
            _ => None,
        }));
    }
    let card = card.expect("a card after the cooldown");
    assert_eq!(card.pattern, tutee_core::teaching_helper::Antipattern::Commanding);
    assert!(card.requires_selection);

    let before = session.state.next_index;
    let err = session.post_message("Change high too.", None).unwrap_err();
    assert!(matches!(err, SessionError::Gated { .. }));
    assert_eq!(session.state.next_index, before);
    assert!(matches!(
        session.post_message("Change high too.", Some(7)),
        Err(SessionError::Helper(_))
    ));
    let events = session.post_message("Why do we move high?", Some(1)).unwrap();
    assert_eq!(kinds(&events)[..2], ["card_selection", "tutor_msg"]);
}
