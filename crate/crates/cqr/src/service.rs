//! HTTP session service.
//!
//! `POST /sessions` opens a conversation, `POST /sessions/{id}/answers`
//! feeds it a yes/no answer, `GET` inspects it and `DELETE` drops it.
//! Sessions live in memory and expire after an idle period.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, TryLockError};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cqr_core::corpus::{retrieve_candidates, Bm25Index, QueryRecord, DEFAULT_CANDIDATES};
use cqr_core::embedding::Feedback;
use cqr_core::engine::{
    apply_feedback, ask, question_text, select_tag_gbs, start_session, Engine, Ranking, SessionState,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
const TOP_K: usize = 10;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_rounds: usize,
    pub idle_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_rounds: DEFAULT_MAX_ROUNDS,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

struct LiveSession {
    state: SessionState,
    created_at: u64,
    last_used: Instant,
    max_rounds: usize,
    done: bool,
}

pub struct AppState {
    engine: Engine,
    queries: HashMap<String, QueryRecord>,
    index: Option<Arc<Bm25Index>>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl AppState {
    pub fn new(
        engine: Engine,
        queries: Vec<QueryRecord>,
        index: Option<Arc<Bm25Index>>,
        config: ServiceConfig,
    ) -> Self {
        AppState {
            engine,
            queries: queries.into_iter().map(|q| (q.id.clone(), q)).collect(),
            index,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn lookup(&self, id: &str) -> Option<Arc<Mutex<LiveSession>>> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let timeout = self.config.idle_timeout;
        // a session locked by an in-flight request is in use, so keep it
        sessions.retain(|_, s| match s.try_lock() {
            Ok(s) => s.last_used.elapsed() <= timeout,
            Err(TryLockError::WouldBlock) => true,
            Err(TryLockError::Poisoned(_)) => false,
        });
        sessions.get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/answers", post(answer))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn internal(err: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub query_text: Option<String>,
    #[serde(default)]
    pub query_id: Option<String>,
    #[serde(default)]
    pub max_rounds: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankedRow {
    pub id: String,
    pub title: String,
    pub score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NextQuestion {
    pub tag: String,
    pub text: String,
}

fn rows(engine: &Engine, ranking: &Ranking, k: usize) -> Vec<RankedRow> {
    ranking
        .top(k)
        .iter()
        .map(|c| RankedRow {
            id: c.id.clone(),
            title: engine.corpus.get(&c.id).map(|q| q.title.clone()).unwrap_or_default(),
            score: c.score,
            probability: c.probability,
        })
        .collect()
}

fn next_question(session: &LiveSession) -> Option<NextQuestion> {
    session.state.pending.as_ref().map(|tag| NextQuestion {
        tag: tag.clone(),
        text: question_text(tag),
    })
}

/// Asks the next GBS tag, or marks the session done.
fn advance(session: &mut LiveSession) -> Result<(), ApiError> {
    if session.state.round() >= session.max_rounds {
        session.done = true;
        return Ok(());
    }
    match select_tag_gbs(&session.state) {
        Some(tag) => ask(&mut session.state, &tag).map_err(internal),
        None => {
            session.done = true;
            Ok(())
        }
    }
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    let engine = &app.engine;
    let (query_id, vector, candidates) = match (&req.query_id, &req.query_text) {
        (Some(id), _) => {
            let record = app
                .queries
                .get(id)
                .ok_or_else(|| not_found(format!("unknown query id `{id}`")))?;
            let vector = match engine.query_vector(id) {
                Ok(v) => v,
                Err(_) => engine.embed_text(&record.text).map_err(internal)?,
            };
            (Some(id.as_str()), vector, record.candidates.clone())
        }
        (None, Some(text)) if !text.trim().is_empty() => {
            let index = app
                .index
                .as_ref()
                .ok_or_else(|| bad_request("free-text queries need a corpus index"))?;
            let candidates = retrieve_candidates(index, text, DEFAULT_CANDIDATES).map_err(internal)?;
            let vector = engine.embed_text(text).map_err(|e| bad_request(e.to_string()))?;
            (None, vector, candidates)
        }
        _ => return Err(bad_request("query_text or query_id is required")),
    };
    let state = start_session(engine, query_id, vector, &candidates).map_err(internal)?;
    let mut session = LiveSession {
        state,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default(),
        last_used: Instant::now(),
        max_rounds: req.max_rounds.unwrap_or(app.config.max_rounds),
        done: false,
    };
    advance(&mut session)?;

    let id = uuid::Uuid::new_v4().to_string();
    let body = json!({
        "session_id": id,
        "created_at": session.created_at,
        "round": 0,
        "ranking": rows(engine, &session.state.ranking, TOP_K),
        "next_question": next_question(&session),
        "done": session.done,
    });
    app.sessions
        .lock()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

fn parse_answer(answer: &str) -> Option<Feedback> {
    match answer {
        "yes" => Some(Feedback::Positive),
        "no" => Some(Feedback::Negative),
        _ => None,
    }
}

async fn answer(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<AnswerRequest>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = app
        .lookup(&id)
        .ok_or_else(|| not_found(format!("unknown session `{id}`")))?;
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    let feedback = parse_answer(&req.answer)
        .ok_or_else(|| bad_request(format!("answer must be \"yes\" or \"no\", got {:?}", req.answer)))?;

    let mut session = handle.lock().map_err(internal)?;
    session.last_used = Instant::now();
    let mut verdict = None;
    if !session.done {
        let tag = session
            .state
            .pending
            .clone()
            .ok_or_else(|| internal("active session has no pending question"))?;
        apply_feedback(&app.engine, &mut session.state, &tag, feedback).map_err(internal)?;
        verdict = session.state.feedback.last().cloned();
        advance(&mut session)?;
    }
    Ok(Json(json!({
        "session_id": id,
        "round": session.state.round(),
        "ranking": rows(&app.engine, &session.state.ranking, TOP_K),
        "gate_verdict": verdict.as_ref().map(|v| v.verdict.as_str()),
        "gate_score": verdict.as_ref().and_then(|v| v.gate_score),
        "next_question": next_question(&session),
        "done": session.done,
    })))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = app
        .lookup(&id)
        .ok_or_else(|| not_found(format!("unknown session `{id}`")))?;
    let mut session = handle.lock().map_err(internal)?;
    session.last_used = Instant::now();
    let history: Vec<_> = session
        .state
        .feedback
        .iter()
        .map(|f| {
            json!({
                "tag": f.tag,
                "feedback": f.feedback.as_str(),
                "gate": f.verdict.as_str(),
                "gate_score": f.gate_score,
            })
        })
        .collect();
    Ok(Json(json!({
        "session_id": id,
        "query_id": session.state.query_id,
        "created_at": session.created_at,
        "round": session.state.round(),
        "ranking": rows(&app.engine, &session.state.ranking, usize::MAX),
        "history": history,
        "next_question": next_question(&session),
        "done": session.done,
    })))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let removed = app.sessions.lock().expect("session map poisoned").remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(format!("unknown session `{id}`"))),
    }
}
