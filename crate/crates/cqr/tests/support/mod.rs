#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cqr::service::{router, AppState, ServiceConfig};
use cqr_core::corpus::{build_bm25_index, Bm25Config};
use cqr_core::engine::{Engine, EngineConfig, Policy};
use cqr_core::sim::{run_experiment_detailed, ExperimentConfig, SimulatorConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

#[allow(unused_imports)]
pub use common::{toy_pipeline, ToyPipeline};

pub fn engine_config() -> EngineConfig {
    EngineConfig {
        use_gate: true,
        ..EngineConfig::default()
    }
}

pub fn app(p: &ToyPipeline, config: ServiceConfig) -> Router {
    let engine = Engine::new(p.model.clone(), Some(p.gate.clone()), p.corpus.clone(), engine_config()).unwrap();
    let index = build_bm25_index(&p.corpus, &Bm25Config::default()).unwrap();
    router(Arc::new(AppState::new(
        engine,
        p.test.clone(),
        Some(Arc::new(index)),
        config,
    )))
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or("").to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// `(id, score, probability)` rows of a JSON ranking.
pub fn json_ranking(v: &Value) -> Vec<(String, f64, f64)> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["id"].as_str().unwrap().to_string(),
                r["score"].as_f64().unwrap(),
                r["probability"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn offline_rows(r: &cqr_core::engine::Ranking, k: usize) -> Vec<(String, f64, f64)> {
    r.top(k)
        .iter()
        .map(|c| (c.id.clone(), c.score, c.probability))
        .collect()
}

/// Replays `n` simulated sessions over HTTP and checks every ranking
/// against the offline run. Returns the number of answers replayed.
pub async fn replay_transcripts(p: &ToyPipeline, n: usize, noise: f64) -> Result<usize, String> {
    let config = ExperimentConfig {
        rounds: 5,
        simulator: SimulatorConfig {
            noise_rate: noise,
            seed: 3,
        },
        policy: Policy::Gbs,
        engine: engine_config(),
    };
    let queries = &p.test[..n.min(p.test.len())];
    let (_, outcomes) = run_experiment_detailed(
        p.model.clone(),
        Some(p.gate.clone()),
        p.corpus.clone(),
        queries,
        &config,
    )
    .map_err(|e| e.to_string())?;
    let app = app(p, ServiceConfig::default());
    let mut answers = 0;
    for o in &outcomes {
        let conv = &o.conversation;
        let body = format!(r#"{{"query_id":"{}","max_rounds":5}}"#, o.query_id);
        let (status, created) = send(&app, "POST", "/sessions", Some(&body)).await;
        if status != StatusCode::CREATED {
            return Err(format!("{}: create returned {status}", o.query_id));
        }
        if json_ranking(&created["ranking"]) != offline_rows(&conv.rankings[0], 10) {
            return Err(format!("{}: round-0 ranking differs", o.query_id));
        }
        let id = created["session_id"].as_str().unwrap().to_string();
        let mut next = created["next_question"].clone();
        for (i, entry) in conv.transcript.iter().enumerate() {
            if next["tag"].as_str() != Some(entry.tag.as_str()) {
                return Err(format!(
                    "{} round {}: asked {next} offline {}",
                    o.query_id,
                    i + 1,
                    entry.tag
                ));
            }
            let body = format!(r#"{{"answer":"{}"}}"#, entry.feedback.as_str());
            let (status, resp) = send(&app, "POST", &format!("/sessions/{id}/answers"), Some(&body)).await;
            if status != StatusCode::OK {
                return Err(format!("{} round {}: answer returned {status}", o.query_id, i + 1));
            }
            if resp["gate_verdict"].as_str() != Some(entry.gate.as_str()) {
                return Err(format!("{} round {}: gate verdict differs", o.query_id, i + 1));
            }
            if json_ranking(&resp["ranking"]) != offline_rows(&conv.rankings[i + 1], 10) {
                return Err(format!("{} round {}: ranking differs", o.query_id, i + 1));
            }
            next = resp["next_question"].clone();
            answers += 1;
        }
        let (_, full) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
        if json_ranking(&full["ranking"]) != offline_rows(conv.final_ranking(), usize::MAX) {
            return Err(format!("{}: final full ranking differs", o.query_id));
        }
        if full["done"] != Value::Bool(true) || !next.is_null() {
            return Err(format!("{}: session not done after replay", o.query_id));
        }
    }
    Ok(answers)
}
