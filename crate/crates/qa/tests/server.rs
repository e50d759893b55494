//! HTTP API exercised in-process.

use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use qa::bundle::{Bundle, BundlePaths};
use qa::server::{router, SessionView, SESSION_HEADER};
use serde_json::Value;
use tower::ServiceExt;

fn bundle(system: &str) -> Bundle {
    let fx = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    Bundle::load(&BundlePaths {
        model: fx.join("casestudy.qm.json"),
        plan: fx.join("casestudy.plan.json"),
        taxonomy: fx.join("taxonomy.json"),
        system: fx.join(format!("{system}.system.json")),
        findings: ["w3af", "wapiti", "grendel"]
            .iter()
            .map(|s| fx.join(format!("{system}.{s}.findings.json")))
            .collect(),
        adapter: "normalized".into(),
    })
    .unwrap()
}

fn app() -> Router {
    router(
        bundle("phpshop")
            .assess_at("2000-01-01T00:00:00Z".into())
            .unwrap(),
    )
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    session: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(s) = session {
        req = req.header(SESSION_HEADER, s);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn view(v: Value) -> SessionView {
    serde_json::from_value(v).unwrap()
}

fn assert_normalized(v: &SessionView) {
    for p in &v.posteriors {
        assert!(
            (p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "{}",
            p.node
        );
    }
}

#[tokio::test]
async fn net_lists_all_nodes_with_names() {
    let app = app();
    let (status, net) = call(&app, "GET", "/api/net", None, None).await;
    assert_eq!(status, StatusCode::OK);
    let nodes = net["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 20);
    let sql = nodes.iter().find(|n| n["id"] == "m.sql-injection").unwrap();
    assert_eq!(sql["kind"], "measure");
    assert_eq!(sql["name"], "SQL Injection");
    assert_eq!(sql["states"], serde_json::json!(["no", "yes"]));
    assert_eq!(
        sql["parents"],
        serde_json::json!(["f.sanitation-of-sql-statement"])
    );
}

#[tokio::test]
async fn index_serves_the_web_ui() {
    let res = app()
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert!(std::str::from_utf8(&body)
        .unwrap()
        .contains("/api/posteriors"));
}

#[tokio::test]
async fn override_raises_density_and_clear_restores_base() {
    let app = app();
    let (_, report) = call(&app, "GET", "/api/report", None, None).await;
    let (_, base) = call(&app, "GET", "/api/posteriors", None, None).await;
    let base = view(base);
    assert_normalized(&base);
    assert_eq!(base.density_mean, report["densityMean"].as_f64().unwrap());

    let body = serde_json::json!({"node": "m.sql-injection", "state": "yes"});
    let (status, after) = call(&app, "POST", "/api/observations", None, Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let after = view(after);
    assert_normalized(&after);
    assert!(after.density_mean > base.density_mean);
    let (_, again) = call(&app, "GET", "/api/posteriors", None, None).await;
    assert_eq!(view(again), after);

    let (status, cleared) = call(&app, "DELETE", "/api/observations", None, None).await;
    assert_eq!(status, StatusCode::OK);
    let cleared = view(cleared);
    assert_eq!(cleared, base);
    // Non-measure posteriors equal the report exactly.
    let reported: Vec<qa_core::assess::NodePosterior> =
        serde_json::from_value(report["posteriors"].clone()).unwrap();
    for p in &reported {
        assert_eq!(
            cleared
                .posteriors
                .iter()
                .find(|q| q.node == p.node)
                .unwrap(),
            p
        );
    }
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let body = serde_json::json!({"node": "a.attack", "state": "high"});
    call(&app, "POST", "/api/observations", Some("alice"), Some(body)).await;
    let (_, alice) = call(&app, "GET", "/api/posteriors", Some("alice"), None).await;
    let (_, bob) = call(&app, "GET", "/api/posteriors", Some("bob"), None).await;
    assert_eq!(view(alice).overrides.len(), 1);
    assert!(view(bob).overrides.is_empty());
}

#[tokio::test]
async fn retract_and_single_clear() {
    let app = app();
    let (_, base) = call(&app, "GET", "/api/posteriors", None, None).await;
    let base = view(base);
    let body = serde_json::json!({"node": "m.code-comments", "state": null});
    let (_, retracted) = call(&app, "POST", "/api/observations", None, Some(body)).await;
    let retracted = view(retracted);
    assert!(!retracted.evidence.contains_key("m.code-comments"));
    assert_eq!(retracted.overrides["m.code-comments"], None);
    let (_, cleared) = call(
        &app,
        "DELETE",
        "/api/observations?node=m.code-comments",
        None,
        None,
    )
    .await;
    assert_eq!(view(cleared), base);
}

#[tokio::test]
async fn bad_requests_are_rejected_without_state_change() {
    let app = app();
    let (_, base) = call(&app, "GET", "/api/posteriors", None, None).await;
    let (s, e) = call(
        &app,
        "POST",
        "/api/observations",
        None,
        Some(serde_json::json!({"node": "nope", "state": "yes"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(e["error"].as_str().unwrap().contains("nope"));
    let (s, _) = call(
        &app,
        "POST",
        "/api/observations",
        None,
        Some(serde_json::json!({"node": "a.attack", "state": "huge"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(
        &app,
        "POST",
        "/api/observations",
        None,
        Some(serde_json::json!({"state": "yes"})),
    )
    .await;
    assert!(s.is_client_error());
    let (_, now) = call(&app, "GET", "/api/posteriors", None, None).await;
    assert_eq!(now, base);
}

/// A fresh service replaying the same overrides yields identical output.
#[tokio::test]
async fn replay_on_restart_is_identical() {
    let steps = [
        (
            "POST",
            Some(serde_json::json!({"node": "m.sql-injection", "state": "yes"})),
        ),
        (
            "POST",
            Some(serde_json::json!({"node": "a.injection", "state": "low"})),
        ),
        ("DELETE", None),
        (
            "POST",
            Some(serde_json::json!({"node": "f.authenticity-of-request", "state": "high"})),
        ),
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let app = app();
        let mut out = Vec::new();
        for (m, b) in &steps {
            out.push(call(&app, m, "/api/observations", None, b.clone()).await.1);
        }
        runs.push(out);
    }
    assert_eq!(runs[0], runs[1]);
}
