mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tutee_core::offline::HeuristicBackend;
use tutee_server::{App, Clock, Store};

fn app(store: Option<Store>) -> Router {
    let mut configs = BTreeMap::new();
    for name in ["teachyou", "baseline"] {
        let mut cfg = common::config(name);
        // The starter code loops forever on most cases; keep test runs short.
        cfg.sandbox.time_limit = std::time::Duration::from_millis(400);
        configs.insert(name.to_string(), cfg);
    }
    let app = App::new(configs, Some("teachyou".into()), Arc::new(HeuristicBackend::new()), store, Clock::Logical).unwrap();
    Arc::new(app).router()
}

async fn call(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(router: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(router, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(router: &Router, config: &str) -> String {
    let (status, v) = json_call(router, "POST", "/sessions", Some(json!({ "config": config }))).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session"]["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_post_and_read_back() {
    let router = app(None);
    let id = create(&router, "teachyou").await;
    let (status, v) = json_call(&router, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["phase"], "concept_check");
    assert_eq!(v["send_enabled"], true);
    assert_eq!(v["persona"]["name"], "Pip");

    let (status, v) = json_call(
        &router,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({ "text": "Binary search needs a sorted list." })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let kinds: Vec<&str> = v["events"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["tutor_msg", "tutee_msg", "state_snapshot"]);
}

#[tokio::test]
async fn unknown_session_and_config_are_reported() {
    let router = app(None);
    let (status, _) = json_call(&router, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json_call(&router, "POST", "/sessions", Some(json!({ "config": "nope" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pending_red_card_locks_the_chat() {
    let router = app(None);
    let id = create(&router, "teachyou").await;
    let uri = format!("/sessions/{id}/messages");
    for text in ["Change low to mid + 1.", "Fix the else branch.", "Write the entire code.", "Delete that line."] {
        let (status, _) = json_call(&router, "POST", &uri, Some(json!({ "text": text }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, view) = json_call(&router, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["send_enabled"], false);
    let count = view["event_count"].as_u64().unwrap();

    let (status, v) = json_call(&router, "POST", &uri, Some(json!({ "text": "Change high." }))).await;
    assert_eq!(status, StatusCode::LOCKED);
    assert_eq!(v["card"]["pattern"], view["pending_card"]["pattern"]);
    let (_, after) = json_call(&router, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(after["event_count"].as_u64().unwrap(), count);

    let (status, v) = json_call(&router, "POST", &uri, Some(json!({ "text": "Why?", "selection": 0 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["events"][0]["kind"], "card_selection");
    assert_eq!(v["session"]["send_enabled"], true);
}

#[tokio::test]
async fn objectives_and_tests_over_http() {
    let router = app(None);
    let id = create(&router, "baseline").await;
    let (status, _) = json_call(&router, "POST", &format!("/sessions/{id}/objectives/2"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, v) = json_call(&router, "POST", &format!("/sessions/{id}/objectives/1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["phase"], "problem_solving");
}

#[tokio::test]
async fn scratch_runs_code_in_the_sandbox() {
    let router = app(None);
    let id = create(&router, "teachyou").await;
    let (status, v) = json_call(
        &router,
        "POST",
        &format!("/sessions/{id}/scratch"),
        Some(json!({ "code": "print(int(input()) * 2)", "input": "21\n" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stdout"], "42\n");
    assert_eq!(v["termination"], "exited");
}

#[tokio::test]
async fn annotated_transcript_feeds_the_phase_report() {
    let router = app(None);
    let id = create(&router, "baseline").await;
    for text in ["Hi!", "The list must be sorted.", "Why do we halve the range?"] {
        json_call(&router, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": text }))).await;
    }
    let (status, bytes) = call(&router, "GET", &format!("/sessions/{id}/transcript?format=annotated"), None).await;
    assert_eq!(status, StatusCode::OK);
    let messages = tutee_core::dialogue_taxonomy::parse_annotated(std::str::from_utf8(&bytes).unwrap()).unwrap();
    assert_eq!(messages.len(), 6);
    tutee_core::dialogue_taxonomy::phase_report(&messages).unwrap();

    let (_, full) = json_call(&router, "GET", &format!("/sessions/{id}/transcript"), None).await;
    assert_eq!(full["snapshots"].as_array().unwrap().len(), 4);
    assert_eq!(full["header"]["turns"], 3);
}

#[tokio::test]
async fn event_stream_replays_backlog() {
    let router = app(None);
    let id = create(&router, "baseline").await;
    json_call(&router, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": "Hello" }))).await;
    let req = Request::builder().uri(format!("/sessions/{id}/events")).body(Body::empty()).unwrap();
    let res = router.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let mut body = res.into_body();
    let mut text = String::new();
    while text.matches("event:").count() < 4 {
        let frame = body.frame().await.unwrap().unwrap();
        if let Some(data) = frame.data_ref() {
            text.push_str(std::str::from_utf8(data).unwrap());
        }
    }
    let kinds: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("event: ")).collect();
    assert_eq!(kinds, ["state_snapshot", "tutor_msg", "tutee_msg", "state_snapshot"]);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let router = app(Some(Store::open(dir.path()).unwrap()));
    let id = create(&router, "teachyou").await;
    json_call(&router, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": "Hello Pip" }))).await;
    json_call(&router, "POST", &format!("/sessions/{id}/objectives/1"), None).await;
    let (_, before) = json_call(&router, "GET", &format!("/sessions/{id}/transcript"), None).await;
    drop(router);

    let router = app(Some(Store::open(dir.path()).unwrap()));
    let (status, after) = json_call(&router, "GET", &format!("/sessions/{id}/transcript"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    let (status, _) = json_call(&router, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": "Again" }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_to_one_session_conflict() {
    let router = app(None);
    let id = create(&router, "baseline").await;
    // Hold the writer slot with a slow test run, then post.
    let slow = {
        let router = router.clone();
        let id = id.clone();
        tokio::spawn(async move { json_call(&router, "POST", &format!("/sessions/{id}/tests"), None).await })
    };
    let mut saw_conflict = false;
    for _ in 0..200 {
        let (status, _) = json_call(&router, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": "hi" }))).await;
        if status == StatusCode::CONFLICT {
            saw_conflict = true;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    let (status, _) = slow.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert!(saw_conflict);
}
