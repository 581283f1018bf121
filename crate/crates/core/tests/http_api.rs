use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use nudge_core::config::Settings;
use nudge_core::orchestrator::engine::FixedClock;
use nudge_core::orchestrator::http::router;
use nudge_core::orchestrator::Engine;
use nudge_core::sim::persona::base_day;

fn app() -> Router {
    let engine = Engine::from_settings(Settings::default()).unwrap().with_clock(Box::new(FixedClock(base_day())));
    router(Arc::new(engine))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let value = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, value, text)
}

fn event(sid: &str, kind: &str, at: &str) -> Value {
    json!({ "session_id": sid, "kind": kind, "at": at })
}

fn appliance(sid: &str, at: &str, id: &str, w: f64, h: f64, action: &str) -> Value {
    json!({ "session_id": sid, "kind": "appliance_action", "at": at,
            "attributes": { "appliance_id": id, "wattage_w": w, "usage_hours": h, "action": action } })
}

/// Intuitive, contemplation, high attention: enable_comparisons first.
async fn contemplating_session(app: &Router, sid: &str) {
    let (s, v, _) = call(app, "POST", "/sessions", Some(json!({ "session_id": sid }))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["session_id"], sid);
    let ctx = json!({ "device": "desktop", "at": "2025-03-03T09:00:00Z", "utc_offset_minutes": 0 });
    let (s, v, _) = call(app, "POST", &format!("/sessions/{sid}/context"), Some(ctx)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["time_of_day"], "morning");
    let mut events = vec![event(sid, "page_focus", "2025-03-03T09:00:00Z")];
    events.push(appliance(sid, "2025-03-03T09:00:02Z", "heater", 2000.0, 4.0, "add"));
    for i in 0..6 {
        events.push(event(sid, "click", &format!("2025-03-03T09:00:1{i}Z")));
    }
    events.push(appliance(sid, "2025-03-03T09:00:30Z", "heater", 2000.0, 4.0, "view"));
    let (s, v, _) = call(app, "POST", &format!("/sessions/{sid}/events"), Some(json!({ "events": events }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["events"], 9);
}

#[tokio::test]
async fn thumbs_down_switches_strategy_and_feedback_is_idempotent() {
    let app = app();
    contemplating_session(&app, "web-1").await;
    let (s, first, _) = call(&app, "POST", "/sessions/web-1/run", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["kind"], "delivered");
    let strategy = first["delivery"]["strategy_id"].as_str().unwrap().to_string();
    assert_eq!(strategy, "enable_comparisons");
    let nudge_id = first["delivery"]["nudge_id"].clone();

    let fb = json!({ "nudge_id": nudge_id, "thumbs": "down" });
    let (s, ack, _) = call(&app, "POST", "/sessions/web-1/feedback", Some(fb.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["duplicate"], false);
    let (s, again, _) = call(&app, "POST", "/sessions/web-1/feedback", Some(json!({ "nudge_id": nudge_id, "thumbs": "up" }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["duplicate"], true);
    assert_eq!(again["record"]["thumbs"], "down");

    let (_, second, _) = call(&app, "POST", "/sessions/web-1/run?reasoner=rule_based", None).await;
    assert_eq!(second["kind"], "delivered");
    assert_ne!(second["delivery"]["strategy_id"], strategy.as_str());

    let (s, traces, _) = call(&app, "GET", "/admin/traces/web-1", None).await;
    assert_eq!(s, StatusCode::OK);
    let feedback_traces = traces.as_array().unwrap().iter().filter(|r| r["stage"] == "feedback").count();
    assert_eq!(feedback_traces, 1);
}

#[tokio::test]
async fn ui_context_and_explanation_follow_the_latest_delivery() {
    let app = app();
    contemplating_session(&app, "web-2").await;
    let (s, _, _) = call(&app, "GET", "/sessions/web-2/ui-context", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    call(&app, "POST", "/sessions/web-2/run", None).await;
    let (s, ui, text) = call(&app, "GET", "/sessions/web-2/ui-context", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ui["font_size_px"], 16);
    assert_eq!(ui["chart_type"], "pie");
    // Canonical: sorted keys, no whitespace.
    assert!(text.starts_with(r##"{"chart_type":"pie","font_size_px":16,"primary_color":"#"##), "{text}");
    let (s, ex, _) = call(&app, "GET", "/sessions/web-2/explanation", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = ex["explanation"].as_str().unwrap();
    for needle in ["intuitive", "contemplation", "high", "enable_comparisons"] {
        assert!(text.contains(needle), "{needle} missing from {text}");
    }
}

#[tokio::test]
async fn emotion_frames_report_their_delta() {
    let app = app();
    contemplating_session(&app, "web-3").await;
    let frame = |h: f64, phase: &str| {
        json!({ "happiness": h, "sadness": 0.0, "anger": 0.0, "fear": 0.0, "disgust": 0.0, "surprise": 0.0,
                "neutral": 1.0 - h, "frame_at": "2025-03-03T09:00:00Z", "phase": phase })
    };
    let (s, _, _) = call(&app, "POST", "/sessions/web-3/emotion", Some(frame(0.000170, "pre_nudge"))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v, _) = call(&app, "POST", "/sessions/web-3/emotion", Some(frame(0.000500, "post_nudge"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "post frame before any delivery: {v}");
    call(&app, "POST", "/sessions/web-3/run", None).await;
    let (s, _, text) = call(&app, "POST", "/sessions/web-3/emotion", Some(frame(0.000500, "post_nudge"))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(text.contains(r#""happiness":0.000330"#), "{text}");
}

#[tokio::test]
async fn errors_have_status_codes_and_json_bodies() {
    let app = app();
    let (s, v, _) = call(&app, "POST", "/sessions/nope/run", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (s, v, _) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    let sid = v["session_id"].as_str().unwrap().to_string();
    let (s, v, _) = call(&app, "POST", &format!("/sessions/{sid}/run"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({ "kind": "no_nudge", "reason": "insufficient_data" }));
    let (s, _, _) = call(&app, "POST", "/sessions", Some(json!({ "session_id": sid }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _, _) = call(&app, "POST", "/sessions", Some(json!({ "session_id": "../x" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "POST", &format!("/sessions/{sid}/run?reasoner=oracle"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let bad_batch = json!([event("someone-else", "click", "2025-03-03T09:00:00Z")]);
    let (s, v, _) = call(&app, "POST", &format!("/sessions/{sid}/events"), Some(bad_batch)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    let (s, _, _) = call(&app, "POST", &format!("/sessions/{sid}/feedback"), Some(json!({ "nudge_id": "x-1", "thumbs": "up" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = call(&app, "GET", "/admin/fairness?group_by=zodiac", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn fairness_endpoint_audits_the_live_log() {
    let app = app();
    contemplating_session(&app, "web-4").await;
    call(&app, "POST", "/sessions/web-4/run", None).await;
    let (s, v, _) = call(&app, "GET", "/admin/fairness", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["grouping_key"], "device");
    assert_eq!(v["per_group"]["desktop"]["delivered"], 1);
    assert_eq!(v["flagged"], false);
    let (_, v, _) = call(&app, "GET", "/admin/fairness?group_by=attention&threshold=1.5", None).await;
    assert_eq!(v["threshold"], 1.5);
    assert_eq!(v["per_group"]["high"]["delivered"], 1);
}
