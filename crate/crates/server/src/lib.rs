//! Tutoring session server: turn orchestration over the core pipeline,
//! sandboxed test runs, an append-only event log and the HTTP/SSE API.

pub mod api;
pub mod config;
pub mod engine;
pub mod events;
pub mod sandbox;
pub mod store;

pub use api::App;
pub use config::{Problem, SessionConfig};
pub use engine::{Services, Session, SessionError};
pub use events::{Clock, ConversationEvent, EventBody};
pub use sandbox::{Sandbox, SandboxConfig};
pub use store::Store;
