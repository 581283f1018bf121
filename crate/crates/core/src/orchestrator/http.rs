//! HTTP API consumed by the dashboard. Bodies are canonical JSON.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::capture::RawEvent;
use crate::domain::{EmotionDistribution, NudgeId, ReasonerKind, SessionId, Thumbs};
use crate::orchestrator::engine::{ContextInput, Engine, EngineError, NewSession};

type Shared = State<Arc<Engine>>;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: message.into() }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownSession(_) | EngineError::UnknownNudge { .. } => StatusCode::NOT_FOUND,
            EngineError::SessionExists(_) => StatusCode::CONFLICT,
            EngineError::BadSessionId(_) | EngineError::Capture(_) | EngineError::Invalid(_) | EngineError::Fairness(_) => {
                StatusCode::BAD_REQUEST
            }
            EngineError::Trace(_) | EngineError::Store(_) | EngineError::Setup(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a str,
        }
        canonical(self.status, &Body { error: &self.message })
    }
}

fn canonical<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match to_canonical_string(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(
    engine: Arc<Engine>,
    f: impl FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() })?
        .map_err(ApiError::from)
}

async fn create_session(State(engine): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: NewSession = if body.iter().all(u8::is_ascii_whitespace) { NewSession::default() } else { parse(&body)? };
    let id = blocking(engine, move |e| e.create_session(req)).await?;
    #[derive(Serialize)]
    struct Created {
        session_id: SessionId,
    }
    Ok(canonical(StatusCode::CREATED, &Created { session_id: id }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EventBatch {
    Bare(Vec<RawEvent>),
    Wrapped { events: Vec<RawEvent> },
}

async fn post_events(State(engine): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let events = match parse::<EventBatch>(&body)? {
        EventBatch::Bare(v) | EventBatch::Wrapped { events: v } => v,
    };
    let id = SessionId::new(id);
    let ack = blocking(engine, move |e| e.ingest_events(&id, &events)).await?;
    Ok(canonical(StatusCode::OK, &ack))
}

async fn post_emotion(State(engine): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let frame: EmotionDistribution = parse(&body)?;
    let id = SessionId::new(id);
    let ack = blocking(engine, move |e| e.record_emotion(&id, frame)).await?;
    Ok(canonical(StatusCode::OK, &ack))
}

async fn post_context(State(engine): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let input: ContextInput = parse(&body)?;
    let id = SessionId::new(id);
    let ctx = blocking(engine, move |e| e.set_context(&id, &input)).await?;
    Ok(canonical(StatusCode::OK, &ctx))
}

async fn run(
    State(engine): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let kind = match q.get("reasoner") {
        None => ReasonerKind::RuleBased,
        Some(r) => ReasonerKind::parse_loose(r).map_err(|e| ApiError::bad_request(e.to_string()))?,
    };
    let id = SessionId::new(id);
    let outcome = blocking(engine, move |e| e.run_pipeline(&id, kind)).await?;
    Ok(canonical(StatusCode::OK, &outcome))
}

async fn ui_context(State(engine): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sid = SessionId::new(id);
    let ui = blocking(engine, move |e| e.ui_context(&sid)).await?;
    let ui = ui.ok_or_else(|| ApiError::not_found("no nudge delivered in this session yet"))?;
    Ok(canonical(StatusCode::OK, &ui))
}

#[derive(Deserialize)]
struct FeedbackBody {
    nudge_id: NudgeId,
    thumbs: Thumbs,
}

async fn feedback(State(engine): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let fb: FeedbackBody = parse(&body)?;
    let id = SessionId::new(id);
    let ack = blocking(engine, move |e| e.submit_feedback(&id, &fb.nudge_id, fb.thumbs)).await?;
    Ok(canonical(StatusCode::OK, &ack))
}

async fn explanation(State(engine): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sid = SessionId::new(id);
    let view = blocking(engine, move |e| e.explanation(&sid)).await?;
    let view = view.ok_or_else(|| ApiError::not_found("no nudge delivered in this session yet"))?;
    Ok(canonical(StatusCode::OK, &view))
}

async fn fairness(State(engine): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let key = q.get("group_by").cloned().unwrap_or_else(|| "device".into());
    let threshold = match q.get("threshold") {
        None => None,
        Some(t) => Some(t.parse::<f64>().map_err(|_| ApiError::bad_request(format!("threshold {t:?} is not a number")))?),
    };
    let report = blocking(engine, move |e| e.fairness(&key, threshold)).await?;
    Ok(canonical(StatusCode::OK, &report))
}

async fn traces(State(engine): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sid = SessionId::new(id);
    let recs = blocking(engine, move |e| e.session_traces(&sid)).await?;
    Ok(canonical(StatusCode::OK, &recs))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/events", post(post_events))
        .route("/sessions/{id}/emotion", post(post_emotion))
        .route("/sessions/{id}/context", post(post_context))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/ui-context", get(ui_context))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/explanation", get(explanation))
        .route("/admin/fairness", get(fairness))
        .route("/admin/traces/{id}", get(traces))
        .with_state(engine)
}

pub async fn serve(engine: Arc<Engine>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}
