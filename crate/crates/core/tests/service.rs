mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};

use pbt_workbench::protocol::RunnerCommand;
use pbt_workbench::service::{router, AppState};

fn app(dir: &std::path::Path, runner: Option<RunnerCommand>) -> Router {
    let state = AppState::new(dir.to_path_buf(), common::replay(), runner).unwrap();
    router(state, &["http://localhost:3000".to_string()])
}

fn workbench_runner() -> Option<RunnerCommand> {
    Some(common::runner_command(&[
        common::fixtures().join("runner/workbench.json")
    ]))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = tower::ServiceExt::oneshot(app.clone(), req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn wait_job(app: &Router, job_id: &str) -> Value {
    for _ in 0..200 {
        let (status, job) = call(app, "GET", &format!("/jobs/{job_id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] != "running" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {job_id} did not finish");
}

fn cumsum_body(id: &str) -> Value {
    json!({
        "target": { "qualname": "numpy.cumsum", "doc_text": common::doc("cumsum") },
        "strategy": "together",
        "session_id": id,
    })
}

#[tokio::test(flavor = "multi_thread")]
async fn create_session_returns_synthesized_view() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (status, body) = call(&app, "POST", "/sessions", Some(cumsum_body("numpy.cumsum-together-1"))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["session"]["state"], "Synthesized");
    assert_eq!(body["session"]["artifacts"].as_array().unwrap().len(), 1);
    assert_eq!(body["diffs"], json!([]));

    let (status, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list["sessions"], json!(["numpy.cumsum-together-1"]));

    let (status, body) = call(&app, "POST", "/sessions", Some(cumsum_body("numpy.cumsum-together-1"))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_documentation_is_unprocessable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let body = json!({
        "target": { "qualname": "numpy.cumsum", "doc_text": "   " },
        "strategy": "together",
    });
    let (status, body) = call(&app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["type"], "EmptyDocumentation");
    assert!(body["error"]["message"].is_string());
    assert_eq!(body.as_object().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_bodies_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "strategy": "together" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["type"], "BadRequest");
    let (status, body) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"]["type"].is_string());
    let (status, _) = call(&app, "GET", "/jobs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/sessions/..%2Fetc", None).await;
    assert!(status.is_client_error());
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_runner_state() {
    let dir = tempfile::tempdir().unwrap();
    let (_, body) = call(&app(dir.path(), None), "GET", "/health", None).await;
    assert_eq!(body["status"], "ok");
    assert_eq!(body["runner"], "down");
    let dead = Some(RunnerCommand::new("/nonexistent/pbt-runner"));
    let (_, body) = call(&app(dir.path(), dead), "GET", "/health", None).await;
    assert_eq!(body["runner"], "down");
    let (_, body) = call(&app(dir.path(), workbench_runner()), "GET", "/health", None).await;
    assert_eq!(body["runner"], "up");
    assert_eq!(body["runner_version"], body["protocol_version"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn evaluate_report_and_mitigate() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), workbench_runner());
    let id = "numpy.cumsum-together-2";
    let (status, _) = call(&app, "POST", "/sessions", Some(cumsum_body(id))).await;
    assert_eq!(status, StatusCode::CREATED);

    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/evaluate"),
        Some(json!({ "n_runs": 200, "seed": 7 })),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["job"]["status"], "running");
    let job = wait_job(&app, body["job"]["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["session_id"], id);

    let (status, report) = call(&app, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["state"], "Reviewed");
    assert_eq!(report["latest"], true);
    assert_eq!(report["scorecard"]["verdicts"][0]["failures"], 30);
    assert!(report["text"].as_str().unwrap().contains("P1"));
    let suggested: Vec<&str> = report["suggested_actions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["issue_id"].as_str().unwrap())
        .collect();
    assert!(suggested.contains(&"unsound-P1"), "{suggested:?}");

    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/mitigations"),
        Some(json!({ "issue_id": "unsound-P1", "action": "FixGeneratorError" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["type"], "ActionMismatch");

    let low = suggested
        .iter()
        .find(|s| s.starts_with("low-diversity"))
        .unwrap()
        .to_string();
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/mitigations"),
        Some(json!({ "issue_id": low })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["version"], 2);

    let (status, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["session"]["state"], "Synthesized");
    assert_eq!(view["diffs"][0]["from"], 1);
    assert!(view["diffs"][0]["diff"].as_str().unwrap().starts_with("---"));

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/report?evaluation=5"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn evaluate_rejects_wrong_state_before_spawning() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), workbench_runner());
    let id = "numpy.cumsum-together-1";
    call(&app, "POST", "/sessions", Some(cumsum_body(id))).await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/mitigations"),
        Some(json!({ "issue_id": "weak-properties" })),
    )
    .await;
    assert!(status.is_client_error(), "{body}");
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/evaluate"),
        Some(json!({ "n_runs": 0 })),
    )
    .await;
    assert!(status.is_client_error(), "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn evaluate_without_runner_fails_the_job() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let id = "numpy.cumsum-together-1";
    call(&app, "POST", "/sessions", Some(cumsum_body(id))).await;
    let (_, body) = call(&app, "POST", &format!("/sessions/{id}/evaluate"), Some(json!({}))).await;
    let job = wait_job(&app, body["job"]["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["type"], "RunnerUnavailable");
}

#[tokio::test(flavor = "multi_thread")]
async fn campaign_job_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), workbench_runner());
    let body = json!({
        "campaign_id": "c1",
        "targets": [{ "qualname": "numpy.cumsum", "doc_text": common::doc("cumsum") }],
        "strategies": ["together"],
        "promptings_per_target": 2,
        "plan": { "n_runs": 200, "seed": 7 },
        "provider": {
            "kind": "replay",
            "fixture_dir": common::fixtures().join("replay"),
            "replay_mode": "ordinal"
        }
    });
    let (status, resp) = call(&app, "POST", "/campaigns", Some(body.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{resp}");
    assert_eq!(resp["campaign_id"], "c1");
    let job = wait_job(&app, resp["job"]["job_id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    let (status, got) = call(&app, "GET", "/campaigns/c1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["status"], "succeeded");
    assert_eq!(got["report"]["cells"][0]["status"], "Complete");
    assert!(dir.path().join("campaigns/c1/campaign.json").is_file());

    let (status, _) = call(&app, "POST", "/campaigns", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "GET", "/campaigns/zzz", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_allows_listed_origin_only() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let preflight = |origin: &str| {
        Request::builder()
            .method("OPTIONS")
            .uri("/sessions")
            .header("origin", origin)
            .header("access-control-request-method", "POST")
            .body(Body::empty())
            .unwrap()
    };
    let ok = tower::ServiceExt::oneshot(app.clone(), preflight("http://localhost:3000"))
        .await
        .unwrap();
    assert_eq!(ok.headers()["access-control-allow-origin"], "http://localhost:3000");
    let other = tower::ServiceExt::oneshot(app, preflight("http://evil.example"))
        .await
        .unwrap();
    assert!(other.headers().get("access-control-allow-origin").is_none());
}
