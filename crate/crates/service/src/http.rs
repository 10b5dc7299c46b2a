//! HTTP API.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/debates` | create from a debate config (`Idempotency-Key` honoured) |
//! | GET | `/debates` | list ids |
//! | GET | `/debates/{id}` | phase and progress |
//! | POST | `/debates/{id}/commands` | `{"command": "start" \| "pause" \| "resume" \| "end"}` or `{"command": "inject", "text": ...}` |
//! | GET | `/debates/{id}/events?from=N` | server-sent events, replayed from `N` |
//! | GET | `/debates/{id}/transcript` | canonical JSON, or HTML with `?format=html` |
//! | GET | `/debates/{id}/analysis` | frequency report and excerpts |
//! | GET, POST | `/personas` | list or register persona sheets |

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use colloquy_core::persistence::render_html;
use colloquy_core::persona::{RawPersona, ValidationError, ValidationMode};
use colloquy_core::{Command, DebateConfig, Phase};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::app::{AppState, ServiceError};
use crate::report::DEFAULT_EXCERPT_LIMIT;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::DebateNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::UnknownPersona(_) => (StatusCode::NOT_FOUND, "unknown_persona"),
            ServiceError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            ServiceError::IllegalTransition(_) => (StatusCode::CONFLICT, "illegal_transition"),
            ServiceError::InvalidCommand(_) => (StatusCode::BAD_REQUEST, "invalid_command"),
            ServiceError::InvalidPersona(_) => (StatusCode::BAD_REQUEST, "invalid_persona"),
            ServiceError::PersonaExists(_) => (StatusCode::CONFLICT, "persona_exists"),
            ServiceError::Analysis(_) => (StatusCode::INTERNAL_SERVER_ERROR, "analysis_failed"),
        };
        (
            status,
            Json(json!({"error": kind, "message": self.to_string()})),
        )
            .into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/debates", post(create_debate).get(list_debates))
        .route("/debates/:id", get(get_debate))
        .route("/debates/:id/commands", post(post_command))
        .route("/debates/:id/events", get(stream_events))
        .route("/debates/:id/transcript", get(get_transcript))
        .route("/debates/:id/analysis", get(get_analysis))
        .route("/personas", get(list_personas).post(register_persona))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub phase: Phase,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, String> {
    serde_json::from_slice(body).map_err(|e| e.to_string())
}

async fn create_debate(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let config: DebateConfig = parse_json(&body).map_err(ServiceError::InvalidConfig)?;
    let key = headers.get("idempotency-key").and_then(|v| v.to_str().ok());
    let (id, created) = state.create_debate(config, key)?;
    let phase = state.debate(&id)?.debate.phase();
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(Created { id, phase })).into_response())
}

async fn list_debates(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.debate_ids())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DebateSummary {
    pub id: String,
    pub phase: Phase,
    pub turns_completed: u64,
    pub total_turns: u32,
    pub pending_stimuli: usize,
    pub events: usize,
    pub config: DebateConfig,
}

async fn get_debate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DebateSummary>, ServiceError> {
    let handle = state.debate(&id)?;
    let summary = handle.debate.with_state(|s| DebateSummary {
        id: s.id.clone(),
        phase: s.phase,
        turns_completed: s.next_turn_index,
        total_turns: s.config.total_turns,
        pending_stimuli: s.pending_stimuli.len(),
        events: handle.events.len(),
        config: s.config.clone(),
    });
    Ok(Json(summary))
}

async fn post_command(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let handle = state.debate(&id)?;
    let command: Command = parse_json(&body).map_err(ServiceError::InvalidCommand)?;
    let phase = handle.command(command)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"phase": phase}))).into_response())
}

#[derive(Debug, Deserialize)]
struct FromQuery {
    from: Option<u64>,
}

async fn stream_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FromQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let handle = state.debate(&id)?;
    // a reconnecting EventSource sends the last id it saw
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|last| last + 1);
    let from = q.from.or(resume).unwrap_or(0);
    let stream = handle.events.subscribe(from).map(|e| {
        let event = Event::default()
            .id(e.sequence.to_string())
            .event(e.kind.name())
            .json_data(&e)
            .unwrap_or_else(|_| Event::default().comment("unserializable event"));
        Ok(event)
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn get_transcript(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> Result<Response, ServiceError> {
    let doc = state.debate(&id)?.document();
    Ok(match q.format.as_deref() {
        Some("html") => Html(render_html(&doc)).into_response(),
        _ => Json(doc).into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct LimitQuery {
    limit: Option<usize>,
}

async fn get_analysis(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<LimitQuery>,
) -> Result<Response, ServiceError> {
    let view = state.analysis(&id, q.limit.unwrap_or(DEFAULT_EXCERPT_LIMIT))?;
    Ok(Json(view).into_response())
}

async fn list_personas(State(state): State<Arc<AppState>>) -> Response {
    Json(state.personas()).into_response()
}

#[derive(Debug, Deserialize)]
struct ModeQuery {
    #[serde(default)]
    mode: ValidationMode,
}

async fn register_persona(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ModeQuery>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let raw: RawPersona =
        parse_json(&body).map_err(|e| ServiceError::InvalidPersona(ValidationError::Parse(e)))?;
    let validated = state.register_persona(&raw, q.mode)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"persona": validated.persona, "warnings": validated.warnings})),
    )
        .into_response())
}
