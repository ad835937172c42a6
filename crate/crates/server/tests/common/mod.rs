#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use tutee_core::knowledge_state::KnowledgeState;
use tutee_core::llm_gateway::Backend;
use tutee_core::offline::HeuristicBackend;
use tutee_server::engine::Services;
use tutee_server::{Clock, Sandbox, SessionConfig};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn config(name: &str) -> SessionConfig {
    SessionConfig::load(data_dir().join("config").join(format!("{name}.toml"))).expect("shipped config loads")
}

pub fn services_with(cfg: SessionConfig, backend: Arc<dyn Backend>) -> Arc<Services> {
    let sandbox = Arc::new(Sandbox::new(cfg.sandbox.clone()));
    Arc::new(Services::new(cfg, backend, sandbox, Clock::Logical))
}

pub fn services(cfg: SessionConfig) -> Arc<Services> {
    services_with(cfg, Arc::new(HeuristicBackend::new()))
}

/// A seed whose only snippet is the reference solution.
pub fn solved_seed(cfg: &SessionConfig) -> KnowledgeState {
    let reference = cfg.problem.reference.clone().expect("problem ships a reference");
    KnowledgeState::new(vec![], vec![format!("```python\n{}\n```", reference.trim_end())]).unwrap()
}

/// Tutor messages covering receiver turns, questions and follow-ups.
pub const SCRIPT: &[&str] = &[
    "Hi Pip, let's look at binary search together.",
    "Binary search only works when the list is sorted, because we throw away half of it each step.",
    "Change the loop so that low = mid + 1 when arr[mid] < target.",
    "Because the target must be to the right of mid if arr[mid] is smaller.",
    "For example, in [1, 3, 5, 7] looking for 7, mid is 1 and arr[1] = 3 < 7, so low becomes 2.",
    "Now add high = mid - 1 when arr[mid] > target.",
    "Write the entire code.",
    "Fix the else branch.",
    "What do you think happens if the list is not sorted?",
    "Good. Each comparison halves the range, so it takes about log n steps.",
    "Try it on [2, 4, 6] with target 5.",
    "Run it again.",
];

/// Posts every message, answering any blocking card with its first option.
pub fn drive(session: &mut tutee_server::Session, script: &[&str]) -> Vec<tutee_server::ConversationEvent> {
    let mut all = Vec::new();
    for text in script {
        let events = match session.post_message(text, None) {
            Ok(e) => e,
            Err(tutee_server::SessionError::Gated { .. }) => session.post_message(text, Some(0)).unwrap(),
            Err(e) => panic!("{e}"),
        };
        all.extend(events);
    }
    all
}

pub fn jsonl(events: &[tutee_server::ConversationEvent]) -> String {
    events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect()
}
