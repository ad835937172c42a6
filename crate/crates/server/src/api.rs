//! HTTP API and server-sent event stream.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use tutee_core::conversation::Phase;
use tutee_core::dialogue_taxonomy::write_annotated;
use tutee_core::knowledge_state::KnowledgeState;
use tutee_core::llm_gateway::Backend;
use tutee_core::mode_shifting::ConversationMode;
use tutee_core::teaching_helper::FeedbackCard;

use crate::config::{Persona, SessionConfig};
use crate::engine::{Objective, Services, Session, SessionError};
use crate::events::{Clock, ConversationEvent};
use crate::sandbox::{CaseResult, RunOutput, Sandbox, SandboxError};
use crate::store::{Store, StoreError};

const EVENT_BUFFER: usize = 256;

struct Slot {
    busy: AtomicBool,
    session: Mutex<Session>,
    events: broadcast::Sender<ConversationEvent>,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Slot {
    fn new(session: Session) -> Self {
        Self {
            busy: AtomicBool::new(false),
            session: Mutex::new(session),
            events: broadcast::channel(EVENT_BUFFER).0,
        }
    }

    /// Claims the single writer slot or reports a conflict.
    fn claim(&self) -> Result<BusyGuard<'_>, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BusyGuard(&self.busy))
            .map_err(|_| ApiError::Busy)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct App {
    services: BTreeMap<String, Arc<Services>>,
    default_config: String,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    store: Option<Store>,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("no session configs were given")]
    NoConfigs,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl App {
    pub fn new(
        configs: BTreeMap<String, SessionConfig>,
        default_config: Option<String>,
        backend: Arc<dyn Backend>,
        store: Option<Store>,
        clock: Clock,
    ) -> Result<Self, AppError> {
        let default_config = default_config
            .or_else(|| configs.keys().next().cloned())
            .ok_or(AppError::NoConfigs)?;
        let services = configs
            .into_iter()
            .map(|(name, cfg)| {
                let sandbox = Arc::new(Sandbox::new(cfg.sandbox.clone()));
                (name, Arc::new(Services::new(cfg, Arc::clone(&backend), sandbox, clock)))
            })
            .collect();
        let app = Self {
            services,
            default_config,
            sessions: RwLock::new(HashMap::new()),
            store,
        };
        app.restore()?;
        Ok(app)
    }

    fn restore(&self) -> Result<(), StoreError> {
        let Some(store) = &self.store else { return Ok(()) };
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        for entry in store.index()? {
            let Some(services) = self.services.get(&entry.config) else {
                tracing::warn!(id = %entry.id, config = %entry.config, "skipping session with unknown config");
                continue;
            };
            let state = store.load(&entry.id)?;
            let session = Session::restore(state, Arc::clone(services));
            sessions.insert(entry.id, Arc::new(Slot::new(session)));
        }
        tracing::info!(count = sessions.len(), "sessions restored");
        Ok(())
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn persist(&self, session: &Session, events: &[ConversationEvent]) -> Result<(), ApiError> {
        if let Some(store) = &self.store {
            store.append(&session.state, events)?;
        }
        Ok(())
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/sessions", post(create_session).get(list_sessions))
            .route("/sessions/{id}", get(get_session))
            .route("/sessions/{id}/messages", post(post_message))
            .route("/sessions/{id}/tests", post(run_tests))
            .route("/sessions/{id}/objectives/{k}", post(advance_objective))
            .route("/sessions/{id}/transcript", get(transcript))
            .route("/sessions/{id}/events", get(events))
            .route("/sessions/{id}/scratch", post(scratch))
            .with_state(self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("unknown session config `{0}`")]
    UnknownConfig(String),
    #[error("another request for this session is in progress")]
    Busy,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("worker failed: {0}")]
    Join(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (status, extra) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            ApiError::UnknownConfig(_) => (StatusCode::BAD_REQUEST, None),
            ApiError::Busy => (StatusCode::CONFLICT, None),
            ApiError::Session(SessionError::Gated { card }) => (StatusCode::LOCKED, Some(json!({ "card": card }))),
            ApiError::Session(SessionError::Sandbox(SandboxError::Spawn(_)) | SessionError::Sandbox(SandboxError::Io(_))) => {
                (StatusCode::INTERNAL_SERVER_ERROR, None)
            }
            ApiError::Session(
                SessionError::OutOfOrder { .. } | SessionError::AlreadyDone(_) | SessionError::TestGated,
            ) => (StatusCode::CONFLICT, None),
            ApiError::Session(_) => (StatusCode::UNPROCESSABLE_ENTITY, None),
            ApiError::Store(_) | ApiError::Join(_) => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        let mut body = json!({ "error": message });
        if let Some(serde_json::Value::Object(extra)) = extra {
            body.as_object_mut().expect("object").extend(extra);
        }
        (status, Json(body)).into_response()
    }
}

type AppState = State<Arc<App>>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Join(e.to_string()))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemView {
    pub title: String,
    pub statement: String,
    pub starter_code: String,
    pub test_count: usize,
}

/// What the UI renders for a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub config: String,
    pub phase: Phase,
    pub mode: ConversationMode,
    pub objectives: Vec<Objective>,
    pub completed: bool,
    pub persona: Persona,
    pub problem: ProblemView,
    pub knowledge: KnowledgeState,
    pub pending_card: Option<FeedbackCard>,
    pub send_enabled: bool,
    pub turns: u64,
    pub event_count: u64,
}

fn view(session: &Session) -> SessionView {
    let s = &session.state;
    let problem = &session.config().problem;
    let pending_card = s.pending_card().cloned();
    SessionView {
        id: s.id.clone(),
        config: s.config.clone(),
        phase: s.phase,
        mode: s.mode(),
        objectives: s.objectives.clone(),
        completed: s.completed(),
        persona: s.persona.clone(),
        problem: ProblemView {
            title: problem.title.clone(),
            statement: problem.statement.clone(),
            starter_code: problem.starter_code.clone(),
            test_count: problem.tests.len(),
        },
        knowledge: s.knowledge.knowledge.clone(),
        send_enabled: pending_card.is_none(),
        pending_card,
        turns: s.turns,
        event_count: s.next_index,
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub config: Option<String>,
}

async fn create_session(State(app): AppState, body: Option<Json<CreateRequest>>) -> Result<impl IntoResponse, ApiError> {
    let name = body
        .and_then(|Json(b)| b.config)
        .unwrap_or_else(|| app.default_config.clone());
    let services = app
        .services
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::UnknownConfig(name.clone()))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (session, events) = Session::create(id.clone(), services)?;
    if let Some(store) = &app.store {
        store.create(&session.state, &events)?;
    }
    let v = view(&session);
    app.sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id, Arc::new(Slot::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session": v, "events": events }))))
}

async fn list_sessions(State(app): AppState) -> Json<Vec<String>> {
    let mut ids: Vec<String> = app
        .sessions
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .keys()
        .cloned()
        .collect();
    ids.sort();
    Json(ids)
}

async fn get_session(State(app): AppState, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = app.slot(&id)?;
    let session = slot.lock();
    Ok(Json(view(&session)))
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub selection: Option<usize>,
}

/// Runs a mutating operation with the single-writer claim held, then
/// persists and broadcasts whatever events it appended.
async fn mutate<T, F>(app: Arc<App>, id: String, op: F) -> Result<(T, Vec<ConversationEvent>, SessionView), ApiError>
where
    F: FnOnce(&mut Session) -> Result<(T, Vec<ConversationEvent>), SessionError> + Send + 'static,
    T: Send + 'static,
{
    let slot = app.slot(&id)?;
    blocking(move || {
        let _claim = slot.claim()?;
        let mut session = slot.lock();
        let (out, events) = op(&mut session)?;
        app.persist(&session, &events)?;
        for e in &events {
            // No subscribers is fine.
            let _ = slot.events.send(e.clone());
        }
        let v = view(&session);
        Ok((out, events, v))
    })
    .await
}

async fn post_message(
    State(app): AppState,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let (_, events, session) = mutate(app, id, move |s| Ok(((), s.post_message(&req.text, req.selection)?))).await?;
    Ok(Json(json!({ "events": events, "session": session })))
}

#[derive(Debug, Serialize)]
struct TestsResponse {
    results: Vec<CaseResult>,
    all_passed: bool,
    events: Vec<ConversationEvent>,
    session: SessionView,
}

async fn run_tests(State(app): AppState, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let (results, events, session) = mutate(app, id, |s| s.run_tests()).await?;
    let all_passed = results.iter().all(|r| r.verdict == crate::sandbox::Verdict::Pass);
    Ok(Json(TestsResponse {
        results,
        all_passed,
        events,
        session,
    }))
}

async fn advance_objective(
    State(app): AppState,
    Path((id, k)): Path<(String, usize)>,
) -> Result<impl IntoResponse, ApiError> {
    let (_, events, session) = mutate(app, id, move |s| Ok(((), s.advance_objective(k)?))).await?;
    Ok(Json(json!({ "objectives": session.objectives, "phase": session.phase, "events": events, "session": session })))
}

#[derive(Debug, Default, Deserialize)]
pub struct TranscriptQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn transcript(
    State(app): AppState,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let t = slot.lock().transcript();
    Ok(match q.format.as_deref() {
        Some("annotated") => {
            let mut out = Vec::new();
            write_annotated(&mut out, &t.messages).expect("writing to memory");
            ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response()
        }
        _ => Json(t).into_response(),
    })
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// Replay stored events with index at least this before going live.
    #[serde(default)]
    pub after: Option<u64>,
}

fn sse_event(e: &ConversationEvent) -> Event {
    Event::default()
        .id(e.index.to_string())
        .event(e.body.kind())
        .data(serde_json::to_string(e).expect("event serializes"))
}

async fn events(
    State(app): AppState,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = app.slot(&id)?;
    let from = q.after.unwrap_or(0);
    // Subscribing under the lock means no event falls between backlog and live stream.
    let (backlog, rx) = {
        let session = slot.lock();
        let backlog: Vec<ConversationEvent> =
            session.state.events.iter().filter(|e| e.index >= from).cloned().collect();
        (backlog, slot.events.subscribe())
    };
    let last = backlog.last().map(|e| e.index);
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if last.is_some_and(|l| e.index <= l) => continue,
                Ok(e) => return Some((e.clone(), (rx, Some(e.index)))),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
pub struct ScratchRequest {
    pub code: String,
    #[serde(default)]
    pub input: String,
}

async fn scratch(
    State(app): AppState,
    Path(id): Path<String>,
    Json(req): Json<ScratchRequest>,
) -> Result<Json<RunOutput>, ApiError> {
    let slot = app.slot(&id)?;
    let sandbox = Arc::clone(&slot.lock().services().sandbox);
    let out = blocking(move || sandbox.run(&req.code, &req.input).map_err(|e| ApiError::Session(e.into()))).await?;
    Ok(Json(out))
}
