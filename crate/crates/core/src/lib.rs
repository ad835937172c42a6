//! Core of a learning-by-teaching platform: a teachable agent whose answers are
//! constrained to an explicit knowledge state.

pub mod conversation;
pub mod knowledge_state;
pub mod llm_gateway;
pub mod reflect_respond;
pub mod dialogue_taxonomy;
pub mod mode_shifting;
pub mod teaching_helper;
pub mod offline;
