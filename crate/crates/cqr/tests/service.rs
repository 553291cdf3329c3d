mod support;

use std::sync::OnceLock;
use std::time::Duration;

use axum::http::StatusCode;
use cqr::service::ServiceConfig;
use serde_json::Value;
use support::{app, json_ranking, replay_transcripts, send, toy_pipeline, ToyPipeline};

fn pipeline() -> &'static ToyPipeline {
    static P: OnceLock<ToyPipeline> = OnceLock::new();
    P.get_or_init(toy_pipeline)
}

async fn create(app: &axum::Router, body: &str) -> Value {
    let (status, v) = send(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

#[tokio::test]
async fn create_by_id_and_by_text() {
    let p = pipeline();
    let app = app(p, ServiceConfig::default());
    let by_id = create(&app, &format!(r#"{{"query_id":"{}"}}"#, p.test[0].id)).await;
    assert_eq!(by_id["round"], 0);
    assert_eq!(by_id["done"], false);
    let ranking = json_ranking(&by_id["ranking"]);
    assert_eq!(ranking.len(), 10);
    assert!(ranking.windows(2).all(|w| w[0].1 >= w[1].1));
    let tag = by_id["next_question"]["tag"].as_str().unwrap();
    assert_eq!(
        by_id["next_question"]["text"],
        format!("Is your question related to {tag}?")
    );
    assert!(by_id["ranking"][0]["title"].as_str().is_some_and(|t| !t.is_empty()));

    let by_text = create(&app, r#"{"query_text":"sort a list of objects"}"#).await;
    assert_ne!(by_id["session_id"], by_text["session_id"]);
    let (status, state) = send(
        &app,
        "GET",
        &format!("/sessions/{}", by_text["session_id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["ranking"].as_array().unwrap().len(), 20);
    assert_eq!(state["history"], Value::Array(vec![]));
}

#[tokio::test]
async fn bad_requests() {
    let p = pipeline();
    let app = app(p, ServiceConfig::default());
    for body in ["", "{}", r#"{"query_text":"   "}"#, "not json"] {
        let (status, _) = send(&app, "POST", "/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body:?}");
    }
    let (status, _) = send(&app, "POST", "/sessions", Some(r#"{"query_id":"nope"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let created = create(&app, &format!(r#"{{"query_id":"{}"}}"#, p.test[0].id)).await;
    let uri = format!("/sessions/{}/answers", created["session_id"].as_str().unwrap());
    for body in [r#"{"answer":"maybe"}"#, r#"{"answer":true}"#, "{", ""] {
        let (status, _) = send(&app, "POST", &uri, Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body:?}");
    }
    let (status, _) = send(&app, "POST", "/sessions/unknown/answers", Some(r#"{"answer":"yes"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "GET", "/sessions/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn answers_until_done_then_final_ranking() {
    let p = pipeline();
    let app = app(p, ServiceConfig::default());
    let created = create(&app, &format!(r#"{{"query_id":"{}","max_rounds":2}}"#, p.test[1].id)).await;
    let id = created["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/answers");
    let (_, first) = send(&app, "POST", &uri, Some(r#"{"answer":"yes"}"#)).await;
    assert_eq!(first["done"], false);
    assert!(first["gate_score"].as_f64().is_some_and(|s| (0.0..=1.0).contains(&s)));
    assert!(["accept", "ask_another"].contains(&first["gate_verdict"].as_str().unwrap()));
    let (_, second) = send(&app, "POST", &uri, Some(r#"{"answer":"no"}"#)).await;
    assert_eq!(second["done"], true);
    assert_eq!(second["next_question"], Value::Null);

    let (status, after) = send(&app, "POST", &uri, Some(r#"{"answer":"yes"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after["done"], true);
    assert_eq!(after["ranking"], second["ranking"]);
    assert_eq!(after["round"], 2);

    let (_, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["history"].as_array().unwrap().len(), 2);
    assert_eq!(state["history"][1]["feedback"], "no");
}

#[tokio::test]
async fn sessions_are_isolated() {
    let p = pipeline();
    let app = app(p, ServiceConfig::default());
    let body = format!(r#"{{"query_id":"{}"}}"#, p.test[2].id);
    let a = create(&app, &body).await;
    let b = create(&app, &body).await;
    let (a, b) = (a["session_id"].as_str().unwrap(), b["session_id"].as_str().unwrap());
    let (_, a1) = send(
        &app,
        "POST",
        &format!("/sessions/{a}/answers"),
        Some(r#"{"answer":"yes"}"#),
    )
    .await;
    let (_, b1) = send(
        &app,
        "POST",
        &format!("/sessions/{b}/answers"),
        Some(r#"{"answer":"no"}"#),
    )
    .await;
    let (_, a2) = send(&app, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(a2["history"].as_array().unwrap().len(), 1);
    assert_eq!(a2["history"][0]["feedback"], "yes");
    assert_eq!(a1["round"], 1);
    assert_eq!(b1["round"], 1);
}

#[tokio::test]
async fn delete_and_expiry() {
    let p = pipeline();
    let svc = app(p, ServiceConfig::default());
    let created = create(&svc, &format!(r#"{{"query_id":"{}"}}"#, p.test[0].id)).await;
    let uri = format!("/sessions/{}", created["session_id"].as_str().unwrap());
    let (status, _) = send(&svc, "DELETE", &uri, None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = send(&svc, "DELETE", &uri, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let short = app(
        p,
        ServiceConfig {
            idle_timeout: Duration::from_millis(20),
            ..ServiceConfig::default()
        },
    );
    let created = create(&short, &format!(r#"{{"query_id":"{}"}}"#, p.test[0].id)).await;
    tokio::time::sleep(Duration::from_millis(60)).await;
    let (status, _) = send(
        &short,
        "GET",
        &format!("/sessions/{}", created["session_id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn http_replay_matches_offline_conversations() {
    let answers = replay_transcripts(pipeline(), 20, 0.1).await.unwrap();
    assert!(answers >= 20);
}
