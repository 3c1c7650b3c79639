//! HTTP JSON API v1 over the session and campaign modules.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::assembly::AssemblyOptions;
use crate::campaign::{run_campaign, CampaignError, CampaignFile};
use crate::llm::{LlmError, ProviderConfig};
use crate::metrics::{render_scorecard_text, MetricsError};
use crate::prompts::{MitigationAction, MitigationKind, PromptError, TargetApi};
use crate::protocol::{RunnerCommand, RunnerError, RunnerHandle, PROTOCOL_VERSION};
use crate::session::{
    default_payload, mitigation_kind_for, validate_id, EvaluationPlanConfig, OpenOptions, Session, SessionError,
    SessionStore, Strategy, Workbench,
};

/// Longest time a request waits for work before answering with a job.
const INLINE_WAIT: Duration = Duration::from_secs(25);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {message}")]
    BindFailure { addr: SocketAddr, message: String },
    #[error("data directory {path}: {message}")]
    DataDir { path: PathBuf, message: String },
    #[error("server error: {0}")]
    Serve(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub runner_cmd: Option<RunnerCommand>,
    /// Used when a request does not name a provider.
    pub provider: ProviderConfig,
    pub cors: Vec<String>,
}

/// Error body: `{"error": {"type", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "type")]
    pub error_type: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error_type: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            error_type: error_type.to_string(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self }))).into_response()
    }
}

fn prompt_error_type(e: &PromptError) -> &'static str {
    match e {
        PromptError::EmptyDocumentation => "EmptyDocumentation",
        PromptError::InvalidTarget(_) => "InvalidTarget",
        PromptError::UnsupportedTask(_) => "UnsupportedTask",
        PromptError::EmptyContext => "EmptyContext",
        PromptError::ContextMismatch { .. } => "ContextMismatch",
        PromptError::UnknownTemplate(_) => "UnknownTemplate",
        PromptError::UnknownPlaceholder(..) => "UnknownPlaceholder",
        PromptError::Io(_) => "TemplateIo",
    }
}

fn llm_error_type(e: &LlmError) -> &'static str {
    match e {
        LlmError::ProviderUnavailable(_) => "ProviderUnavailable",
        LlmError::FixtureMissing { .. } => "FixtureMissing",
        LlmError::AuthMissing(_) => "AuthMissing",
        LlmError::InvalidTranscript(_) => "InvalidTranscript",
        LlmError::InvalidConfig(_) => "InvalidConfig",
        LlmError::NoCodeFound => "NoCodeFound",
    }
}

fn runner_error_type(e: &RunnerError) -> &'static str {
    match e {
        RunnerError::SpawnFailure(_) => "SpawnFailure",
        RunnerError::HandshakeTimeout(_) => "HandshakeTimeout",
        RunnerError::VersionMismatch { .. } => "VersionMismatch",
        RunnerError::RunnerCrashed { .. } => "RunnerCrashed",
        RunnerError::ProtocolError { .. } => "ProtocolError",
        RunnerError::RequestTimeout { .. } => "RequestTimeout",
        RunnerError::InvalidRequest(_) => "InvalidRequest",
        RunnerError::Remote { .. } => "RunnerRemoteError",
        RunnerError::InconsistentReport(_) => "InconsistentReport",
    }
}

fn metrics_error_type(e: &MetricsError) -> &'static str {
    match e {
        MetricsError::EmptyReport => "EmptyReport",
        MetricsError::UnresolvedScope(_) => "UnresolvedScope",
        MetricsError::NoMutants => "NoMutants",
        MetricsError::NoProperties => "NoProperties",
        MetricsError::EmptyAggregate => "EmptyAggregate",
        MetricsError::InvalidRatio(_) => "InvalidRatio",
        MetricsError::EvidenceMismatch(_) => "EvidenceMismatch",
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use StatusCode as S;
        let (status, kind) = match &e {
            SessionError::NotFound(_) => (S::NOT_FOUND, "NotFound"),
            SessionError::AlreadyExists(_) => (S::CONFLICT, "AlreadyExists"),
            SessionError::InvalidId(_) => (S::BAD_REQUEST, "InvalidId"),
            SessionError::InvalidState { .. } => (S::CONFLICT, "InvalidState"),
            SessionError::SynthesisFailed { .. } => (S::UNPROCESSABLE_ENTITY, "SynthesisFailed"),
            SessionError::StaleIssue(_) => (S::CONFLICT, "StaleIssue"),
            SessionError::InvalidPlan(_) => (S::UNPROCESSABLE_ENTITY, "InvalidPlan"),
            SessionError::Journal(_) => (S::INTERNAL_SERVER_ERROR, "CorruptJournal"),
            SessionError::AuditMismatch { .. } => (S::INTERNAL_SERVER_ERROR, "AuditMismatch"),
            SessionError::Io(_) => (S::INTERNAL_SERVER_ERROR, "StorageError"),
            SessionError::Runner(r) => (S::BAD_GATEWAY, runner_error_type(r)),
            SessionError::Metrics(m) => (S::UNPROCESSABLE_ENTITY, metrics_error_type(m)),
            SessionError::Prompt(p) => (S::UNPROCESSABLE_ENTITY, prompt_error_type(p)),
            SessionError::Llm(l) => (S::BAD_GATEWAY, llm_error_type(l)),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<CampaignError> for ApiError {
    fn from(e: CampaignError) -> Self {
        let (status, kind) = match &e {
            CampaignError::ConfigInvalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ConfigInvalid"),
            CampaignError::OutputNotEmpty(_) => (StatusCode::CONFLICT, "OutputNotEmpty"),
            CampaignError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StorageError"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Starts the runner lazily and restarts it after it dies.
#[derive(Debug)]
pub struct RunnerSlot {
    cmd: Option<RunnerCommand>,
    handle: Mutex<Option<Arc<RunnerHandle>>>,
}

impl RunnerSlot {
    pub fn new(cmd: Option<RunnerCommand>) -> Self {
        Self {
            cmd,
            handle: Mutex::new(None),
        }
    }

    pub fn get(&self) -> Result<Arc<RunnerHandle>, ApiError> {
        let unavailable = |m: String| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "RunnerUnavailable", m);
        let cmd = self
            .cmd
            .as_ref()
            .ok_or_else(|| unavailable("no runner configured".into()))?;
        let mut slot = self.handle.lock().unwrap();
        if let Some(h) = slot.as_ref().filter(|h| h.is_alive()) {
            return Ok(Arc::clone(h));
        }
        let h = Arc::new(RunnerHandle::start(cmd).map_err(|e| unavailable(e.to_string()))?);
        *slot = Some(Arc::clone(&h));
        Ok(h)
    }

    /// Version of a live runner, without starting one.
    pub fn status(&self) -> Option<String> {
        let slot = self.handle.lock().unwrap();
        slot.as_ref().filter(|h| h.is_alive()).map(|h| h.version().to_string())
    }
}

pub struct AppState {
    pub workbench: Workbench,
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    pub runner: RunnerSlot,
    jobs: Mutex<HashMap<String, Job>>,
    campaigns: Mutex<HashMap<String, String>>,
}

impl AppState {
    pub fn new(
        data_dir: PathBuf,
        provider: ProviderConfig,
        runner_cmd: Option<RunnerCommand>,
    ) -> Result<Arc<Self>, ServiceError> {
        let store = SessionStore::open(&data_dir).map_err(|e| ServiceError::DataDir {
            path: data_dir.clone(),
            message: e.to_string(),
        })?;
        Ok(Arc::new(Self {
            workbench: Workbench::new(Arc::new(store)),
            data_dir,
            provider,
            runner: RunnerSlot::new(runner_cmd),
            jobs: Mutex::new(HashMap::new()),
            campaigns: Mutex::new(HashMap::new()),
        }))
    }

    fn job(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    /// Runs `work` on the blocking pool and records it as a job.
    fn spawn_job<F>(
        self: &Arc<Self>,
        kind: &str,
        session_id: Option<String>,
        campaign_id: Option<String>,
        work: F,
    ) -> (Job, tokio::task::JoinHandle<()>)
    where
        F: FnOnce(&AppState) -> Result<Value, ApiError> + Send + 'static,
    {
        let job = Job {
            job_id: uuid::Uuid::new_v4().to_string(),
            kind: kind.to_string(),
            status: JobStatus::Running,
            session_id,
            campaign_id,
            result: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(job.job_id.clone(), job.clone());
        let state = Arc::clone(self);
        let id = job.job_id.clone();
        let handle = tokio::task::spawn_blocking(move || {
            let outcome = work(&state);
            let mut jobs = state.jobs.lock().unwrap();
            if let Some(j) = jobs.get_mut(&id) {
                match outcome {
                    Ok(v) => {
                        j.status = JobStatus::Succeeded;
                        j.result = Some(v);
                    }
                    Err(e) => {
                        j.status = JobStatus::Failed;
                        j.error = Some(e);
                    }
                }
            }
        });
        (job, handle)
    }
}

pub fn router(state: Arc<AppState>, cors: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors.iter().filter_map(|o| o.parse().ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/evaluate", post(evaluate_session))
        .route("/sessions/{id}/mitigations", post(mitigate_session))
        .route("/sessions/{id}/report", get(session_report))
        .route("/campaigns", post(create_campaign))
        .route("/campaigns/{id}", get(get_campaign))
        .route("/jobs/{id}", get(get_job))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::new(cfg.data_dir.clone(), cfg.provider.clone(), cfg.runner_cmd.clone())?;
    if let Err(e) = state.runner.get() {
        tracing::warn!(error = %e.message, "runner unavailable; evaluations are disabled until it starts");
    }
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|e| ServiceError::BindFailure {
            addr: cfg.listen,
            message: e.to_string(),
        })?;
    tracing::info!(addr = %cfg.listen, "serving");
    axum::serve(listener, router(state, &cfg.cors))
        .await
        .map_err(|e| ServiceError::Serve(e.to_string()))
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: Option<Json<Value>>) -> Result<T, ApiError> {
    let value = body.map(|Json(v)| v).unwrap_or_else(|| json!({}));
    serde_json::from_value(value).map_err(|e| bad_request(e.to_string()))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let probe = Arc::clone(&state);
    let version = tokio::task::spawn_blocking(move || probe.runner.get().ok().map(|h| h.version().to_string()))
        .await
        .ok()
        .flatten();
    Json(json!({
        "status": "ok",
        "runner": if version.is_some() { "up" } else { "down" },
        "runner_version": version,
        "protocol_version": PROTOCOL_VERSION,
    }))
}

#[derive(Debug, Deserialize)]
struct TargetBody {
    qualname: String,
    #[serde(default)]
    doc_text: String,
    #[serde(default)]
    library: Option<String>,
    #[serde(default)]
    module_path: Option<String>,
    #[serde(default)]
    input_object: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CreateSessionBody {
    target: TargetBody,
    strategy: Strategy,
    #[serde(default)]
    provider: Option<ProviderConfig>,
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    assembly: Option<AssemblyOptions>,
}

fn build_target(t: TargetBody) -> Result<TargetApi, ApiError> {
    if t.doc_text.trim().is_empty() {
        return Err(SessionError::Prompt(PromptError::EmptyDocumentation).into());
    }
    let mut target = TargetApi::from_qualname(&t.qualname, t.doc_text).map_err(SessionError::from)?;
    if let Some(m) = t.module_path {
        target = target.with_module_path(m);
    }
    if let Some(l) = t.library {
        target.library = l;
    }
    if let Some(o) = t.input_object {
        target = target.with_input_object(o);
    }
    target.validate().map_err(SessionError::from)?;
    Ok(target)
}

/// Session plus unified diffs between consecutive artifact versions.
#[derive(Debug, Serialize)]
struct SessionView<'a> {
    session: &'a Session,
    diffs: Vec<VersionDiff>,
}

#[derive(Debug, Serialize)]
struct VersionDiff {
    from: u32,
    to: u32,
    diff: String,
}

fn session_view(session: &Session) -> Value {
    let diffs = session
        .artifacts
        .windows(2)
        .filter_map(|w| {
            Some(VersionDiff {
                from: w[0].version,
                to: w[1].version,
                diff: session.diff(w[0].version, w[1].version)?,
            })
        })
        .collect();
    serde_json::to_value(SessionView { session, diffs }).expect("session serializes")
}

/// Waits briefly for a job; finished jobs answer with `done_status` and
/// their result, running ones with 202 and the job.
async fn answer(
    state: &Arc<AppState>,
    job: Job,
    handle: tokio::task::JoinHandle<()>,
    done_status: StatusCode,
) -> Response {
    let waited = tokio::time::timeout(INLINE_WAIT, handle).await;
    let job = state.job(&job.job_id).unwrap_or(job);
    match (waited, &job.status) {
        (Ok(_), JobStatus::Succeeded) => (done_status, Json(job.result.clone().unwrap_or(Value::Null))).into_response(),
        (Ok(_), JobStatus::Failed) => job.error.clone().expect("failed job has an error").into_response(),
        _ => (StatusCode::ACCEPTED, Json(json!({ "job": job }))).into_response(),
    }
}

async fn create_session(State(state): State<Arc<AppState>>, body: Option<Json<Value>>) -> Response {
    let body: CreateSessionBody = match parse_body(body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    let target = match build_target(body.target) {
        Ok(t) => t,
        Err(e) => return e.into_response(),
    };
    let provider = body.provider.unwrap_or_else(|| state.provider.clone());
    let id = body.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if let Err(e) = validate_id(&id) {
        return ApiError::from(e).into_response();
    }
    if state.workbench.store().exists(&id) {
        return ApiError::from(SessionError::AlreadyExists(id)).into_response();
    }
    let opts = OpenOptions {
        session_id: Some(id.clone()),
        assembly: body.assembly.unwrap_or_default(),
    };
    let strategy = body.strategy;
    let (job, handle) = state.spawn_job("open_session", Some(id), None, move |s| {
        let session = s.workbench.open_session(target, strategy, provider, opts)?;
        Ok(session_view(&session))
    });
    answer(&state, job, handle, StatusCode::CREATED).await
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let ids = state.workbench.store().list()?;
    Ok(Json(json!({ "sessions": ids })))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = state.workbench.load(&id)?;
    Ok(Json(session_view(&s)))
}

async fn evaluate_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Value>>,
) -> Response {
    let plan: EvaluationPlanConfig = match parse_body(body) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    let precheck = state.workbench.load(&id).map_err(ApiError::from).and_then(|s| {
        plan.validate()?;
        match s.state {
            crate::session::SessionState::Synthesized | crate::session::SessionState::Reviewed => Ok(()),
            other => Err(SessionError::InvalidState {
                op: "evaluate",
                state: other,
            }
            .into()),
        }
    });
    if let Err(e) = precheck {
        return e.into_response();
    }
    let sid = id.clone();
    let (job, _handle) = state.spawn_job("evaluate", Some(id), None, move |s| {
        let runner = s.runner.get()?;
        let card = s.workbench.evaluate(&sid, &plan, &runner)?;
        Ok(serde_json::to_value(card).expect("scorecard serializes"))
    });
    (StatusCode::ACCEPTED, Json(json!({ "job": job }))).into_response()
}

#[derive(Debug, Deserialize)]
struct MitigationBody {
    issue_id: String,
    #[serde(default)]
    action: Option<MitigationKind>,
    #[serde(default)]
    edited_payload: Option<String>,
}

async fn mitigate_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<Value>>,
) -> Response {
    let body: MitigationBody = match parse_body(body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    let issue = match state.workbench.issue(&id, &body.issue_id) {
        Ok(i) => i,
        Err(e) => return ApiError::from(e).into_response(),
    };
    let expected = mitigation_kind_for(issue.kind);
    if body.action.is_some_and(|a| a != expected) {
        return ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ActionMismatch",
            format!("issue {} is mitigated with {expected:?}", issue.id),
        )
        .into_response();
    }
    let sid = id.clone();
    let (job, handle) = state.spawn_job("mitigate", Some(id), None, move |s| {
        let action = s.workbench.choose_mitigation(&sid, &issue, body.edited_payload)?;
        let version = s.workbench.apply_mitigation(&sid)?;
        Ok(json!({ "action": action, "version": version }))
    });
    answer(&state, job, handle, StatusCode::OK).await
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    evaluation: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SuggestedAction {
    issue_id: String,
    action: MitigationAction,
}

async fn session_report(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Json<Value>, ApiError> {
    let s = state.workbench.load(&id)?;
    let eval = match q.evaluation {
        Some(i) => s.evaluations.get(i),
        None => s.evaluations.last(),
    }
    .ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "NotFound",
            format!("session {id} has no such evaluation"),
        )
    })?;
    let latest = s.evaluations.len() - 1 == eval.index;
    let suggestions: Vec<SuggestedAction> = if latest {
        eval.scorecard
            .issues
            .iter()
            .filter_map(|i| {
                let action = MitigationAction::new(mitigation_kind_for(i.kind), default_payload(&s, i)).ok()?;
                Some(SuggestedAction {
                    issue_id: i.id.clone(),
                    action,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Json(json!({
        "session_id": s.session_id,
        "state": s.state,
        "evaluation": eval.index,
        "latest": latest,
        "artifact_version": eval.artifact_version,
        "seed": eval.seed,
        "scorecard": eval.scorecard,
        "text": render_scorecard_text(&eval.scorecard),
        "suggested_actions": suggestions,
    })))
}

#[derive(Debug, Deserialize)]
struct CampaignBody {
    #[serde(flatten)]
    config: CampaignFile,
    #[serde(default)]
    campaign_id: Option<String>,
}

async fn create_campaign(State(state): State<Arc<AppState>>, body: Option<Json<Value>>) -> Response {
    let mut body: CampaignBody = match parse_body(body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    if body.config.targets.iter().any(|t| t.doc_file.is_some()) {
        return bad_request("targets must carry doc_text; doc_file is only read from campaign config files")
            .into_response();
    }
    let id = body
        .campaign_id
        .take()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if let Err(e) = validate_id(&id) {
        return ApiError::from(e).into_response();
    }
    let out = state.data_dir.join("campaigns").join(&id);
    if out.exists() {
        return ApiError::new(
            StatusCode::CONFLICT,
            "AlreadyExists",
            format!("campaign {id} already exists"),
        )
        .into_response();
    }
    let cfg = match body.config.resolve(&state.data_dir, Some(out)) {
        Ok(c) => c,
        Err(e) => return ApiError::from(e).into_response(),
    };
    let Some(cmd) = state.runner.cmd.clone() else {
        return ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "RunnerUnavailable",
            "no runner configured",
        )
        .into_response();
    };
    let (job, _handle) = state.spawn_job("campaign", None, Some(id.clone()), move |_| {
        let report = run_campaign(&cfg, &cmd)?;
        Ok(serde_json::to_value(report).expect("report serializes"))
    });
    state.campaigns.lock().unwrap().insert(id.clone(), job.job_id.clone());
    (StatusCode::ACCEPTED, Json(json!({ "campaign_id": id, "job": job }))).into_response()
}

async fn get_campaign(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    validate_id(&id)?;
    let job = state.campaigns.lock().unwrap().get(&id).and_then(|j| state.job(j));
    if let Some(job) = job.filter(|j| j.status != JobStatus::Succeeded) {
        return Ok(Json(
            json!({ "campaign_id": id, "status": job.status, "error": job.error }),
        ));
    }
    let path = state.data_dir.join("campaigns").join(&id).join("campaign.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("campaign {id} not found")))?;
    let report: Value = serde_json::from_str(&text)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string()))?;
    Ok(Json(
        json!({ "campaign_id": id, "status": JobStatus::Succeeded, "report": report }),
    ))
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Job>, ApiError> {
    state
        .job(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("job {id} not found")))
}
