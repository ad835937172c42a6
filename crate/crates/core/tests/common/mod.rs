#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use tutee_core::knowledge_state::KnowledgeState;
use tutee_core::llm_gateway::{Gateway, TemplateRegistry};
use tutee_core::offline::HeuristicBackend;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn gateway() -> Gateway {
    let registry = TemplateRegistry::load_dir(data_dir().join("templates")).expect("shipped templates load");
    Gateway::new(registry, Arc::new(HeuristicBackend::new()))
}

pub fn seed(topic: &str, name: &str) -> (String, KnowledgeState) {
    let path = data_dir().join("seeds").join(topic).join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).expect("seed file readable");
    let state = KnowledgeState::parse(&text).expect("seed parses strictly");
    (text, state)
}

pub const TOPICS: [&str; 3] = ["binary_search", "merge_sort", "breadth_first_search"];
pub const SEEDS: [&str; 4] = ["state1", "state2", "state3", "state4"];
