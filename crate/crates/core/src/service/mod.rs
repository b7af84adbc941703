//! HTTP API, every route under `/v1`.
//!
//! Responses use one envelope: `{"ok": true, "data": ...}` or
//! `{"ok": false, "error": {"code", "message", "detail"}}`.

mod jobs;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use jobs::JobRegistry;
pub use jobs::{Job, JobStatus};

use crate::campaign::{
    ingest_csv, ingest_json_rows, Campaign, InferredConfig, IngestReport, IngestedRow, Scenario, Store,
};
use crate::error::Error;
use crate::strength::{check_trainable, Mixture, StrengthModel};

const MAX_CANDIDATES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug)]
pub struct ApiFailure {
    pub status: StatusCode,
    pub error: ApiError,
}

impl ApiFailure {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            error: ApiError {
                code: code.into(),
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.error.detail = detail;
        self
    }
}

impl From<Error> for ApiFailure {
    fn from(e: Error) -> Self {
        use StatusCode as S;
        let status = match &e {
            Error::NotFound(_) => S::NOT_FOUND,
            Error::Validation(_)
            | Error::Shape(_)
            | Error::Schema(_)
            | Error::Row { .. }
            | Error::Json(_)
            | Error::Csv(_) => S::BAD_REQUEST,
            Error::InsufficientData(_)
            | Error::Infeasible { .. }
            | Error::Fitting(_)
            | Error::Conditioning { .. }
            | Error::Config(_) => S::UNPROCESSABLE_ENTITY,
            Error::Migration { .. } | Error::Integrity { .. } | Error::Io { .. } => S::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            Error::Row { line, .. } => json!({ "line": line }),
            Error::Infeasible { certificate } => json!({ "certificate": certificate }),
            Error::Integrity { digest, .. } => json!({ "digest": digest }),
            Error::Migration { found, expected } => json!({ "found": found, "expected": expected }),
            _ => Value::Null,
        };
        Self::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

type Reply = (StatusCode, Value);

fn success<T: Serialize>(status: StatusCode, data: &T) -> Reply {
    (status, json!({ "ok": true, "data": data }))
}

fn failure(f: ApiFailure) -> Reply {
    (f.status, json!({ "ok": false, "error": f.error }))
}

fn reply(r: Result<Reply, ApiFailure>) -> Reply {
    r.unwrap_or_else(failure)
}

fn respond((status, body): Reply) -> Response {
    (status, Json(body)).into_response()
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        respond(failure(self))
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// When set, requests need `Authorization: Bearer <token>`.
    pub token: Option<String>,
    /// Proposal jobs allowed to compute at once across campaigns.
    pub job_slots: usize,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    token: Option<String>,
    jobs: JobRegistry,
    models: Mutex<HashMap<(String, String), Arc<StrengthModel>>>,
    idempotency: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(store: Store, config: ServiceConfig) -> Self {
        let jobs = JobRegistry::new(store.root().join(".jobs"), config.job_slots.max(1));
        Self {
            inner: Arc::new(Inner {
                token: config.token,
                jobs,
                models: Mutex::new(HashMap::new()),
                idempotency: tokio::sync::Mutex::new(()),
                store,
            }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    fn jobs(&self) -> &JobRegistry {
        &self.inner.jobs
    }

    /// Snapshot by digest, cached after the first load.
    fn model(&self, campaign: &str, digest: &str) -> crate::Result<Arc<StrengthModel>> {
        let key = (campaign.to_string(), digest.to_string());
        if let Some(m) = self.inner.models.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.store().load_snapshot(campaign, digest)?);
        self.inner
            .models
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, m.clone());
        Ok(m)
    }

    fn cache_model(&self, campaign: &str, digest: &str, model: StrengthModel) {
        self.inner
            .models
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert((campaign.to_string(), digest.to_string()), Arc::new(model));
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> Result<T, ApiFailure> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiFailure::from),
        Err(e) => Err(ApiFailure::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            e.to_string(),
        )),
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/campaigns", get(list_campaigns).post(create_campaign))
        .route("/campaigns/{id}/state", get(campaign_state))
        .route("/campaigns/{id}/observations", get(list_observations))
        .route("/campaigns/{id}/batches/{batch}", get(get_batch))
        .route("/campaigns/{id}/measurements", post(post_measurements))
        .route("/campaigns/{id}/fit", post(post_fit))
        .route("/campaigns/{id}/propose", post(post_propose))
        .route("/campaigns/{id}/predict", post(post_predict))
        .route("/campaigns/{id}/pareto/empirical", get(get_empirical))
        .route("/campaigns/{id}/pareto/inferred", post(post_inferred))
        .route("/jobs/{id}", get(get_job).delete(cancel_job))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route(
            "/health",
            get(|| async { respond(success(StatusCode::OK, &json!({ "status": "up" }))) }),
        );
    Router::new()
        .nest("/v1", api)
        .fallback(|| async { ApiFailure::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiFailure::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

#[derive(Serialize, Deserialize)]
struct IdempotencyRecord {
    request: String,
    status: u16,
    body: Value,
}

/// Runs `f` once per `Idempotency-Key`; replays return the stored response.
/// Responses are kept under `<store>/.idempotency/`.
async fn idempotent<Fut>(
    state: &AppState,
    headers: &HeaderMap,
    scope: String,
    body: Bytes,
    f: impl FnOnce() -> Fut,
) -> Response
where
    Fut: Future<Output = Reply>,
{
    let Some(key) = headers.get("idempotency-key").and_then(|v| v.to_str().ok()) else {
        return respond(f().await);
    };
    let dir = state.store().root().join(".idempotency");
    let name = hex::encode(Sha256::digest(format!("{scope}\n{key}")));
    let path = dir.join(format!("{name}.json"));
    let request = hex::encode(Sha256::digest(&body));
    let _guard = state.inner.idempotency.lock().await;
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(rec) = serde_json::from_slice::<IdempotencyRecord>(&bytes) {
            if rec.request != request {
                return ApiFailure::new(
                    StatusCode::CONFLICT,
                    "idempotency_mismatch",
                    "idempotency key was used with a different request body",
                )
                .into_response();
            }
            let mut resp = respond((StatusCode::from_u16(rec.status).unwrap_or(StatusCode::OK), rec.body));
            resp.headers_mut()
                .insert("idempotent-replay", HeaderValue::from_static("true"));
            return resp;
        }
    }
    let (status, body) = f().await;
    if !status.is_server_error() {
        let rec = IdempotencyRecord {
            request,
            status: status.as_u16(),
            body: body.clone(),
        };
        let stored = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_vec(&rec).map_err(std::io::Error::other)?));
        if let Err(e) = stored {
            tracing::error!(error = %e, "could not store idempotent response");
        }
    }
    respond((status, body))
}

fn scope(method: &Method, path: &str) -> String {
    format!("{method} {path}")
}

async fn load_campaign(state: &AppState, id: &str) -> Result<Campaign, ApiFailure> {
    let store = state.store().clone();
    let id = id.to_string();
    blocking(move || store.load(&id)).await
}

fn parse_json<'a, T: Deserialize<'a>>(body: &'a [u8], what: &str) -> Result<T, ApiFailure> {
    serde_json::from_slice(body)
        .map_err(|e| ApiFailure::new(StatusCode::BAD_REQUEST, "bad_request", format!("malformed {what}: {e}")))
}

async fn list_campaigns(State(state): State<AppState>) -> Response {
    let store = state.store().clone();
    respond(reply(
        blocking(move || store.list())
            .await
            .map(|ids| success(StatusCode::OK, &ids)),
    ))
}

async fn create_campaign(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    idempotent(
        &state,
        &headers,
        scope(&Method::POST, "/campaigns"),
        body.clone(),
        || async move {
            reply(
                async {
                    let mut campaign: Campaign = parse_json(&body, "campaign")?;
                    campaign.observations.clear();
                    campaign.batches.clear();
                    campaign.snapshots.clear();
                    let store = s.store().clone();
                    let c = campaign.clone();
                    blocking(move || store.create(&c)).await?;
                    Ok(success(StatusCode::CREATED, &campaign.summary()?))
                }
                .await,
            )
        },
    )
    .await
}

async fn campaign_state(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    respond(reply(
        async {
            let c = load_campaign(&state, &id).await?;
            Ok(success(StatusCode::OK, &c.summary()?))
        }
        .await,
    ))
}

async fn list_observations(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let store = state.store().clone();
    respond(reply(
        blocking(move || store.load_observations(&id))
            .await
            .map(|o| success(StatusCode::OK, &o)),
    ))
}

async fn get_batch(State(state): State<AppState>, Path((id, batch)): Path<(String, String)>) -> Response {
    respond(reply(
        async {
            let c = load_campaign(&state, &id).await?;
            let b = c.batches.iter().find(|b| b.id == batch).ok_or_else(|| {
                ApiFailure::new(StatusCode::NOT_FOUND, "not_found", format!("batch '{batch}' not found"))
            })?;
            Ok(success(StatusCode::OK, b))
        }
        .await,
    ))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeasurementsJson {
    Rows(Vec<serde_json::Map<String, Value>>),
    Wrapped {
        rows: Vec<serde_json::Map<String, Value>>,
        #[serde(default)]
        strict: Option<bool>,
    },
}

#[derive(Serialize)]
struct MeasurementsReply {
    report: IngestReport,
    appended: usize,
    observations: usize,
}

fn is_true(v: Option<&String>) -> bool {
    v.is_some_and(|s| matches!(s.as_str(), "1" | "true" | "yes"))
}

async fn post_measurements(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let s = state.clone();
    let path = format!("/campaigns/{id}/measurements");
    let req_headers = headers.clone();
    idempotent(
        &state,
        &headers,
        scope(&Method::POST, &path),
        body.clone(),
        || async move {
            reply(
                async {
                    if !s.store().exists(&id) {
                        return Err(Error::NotFound(id.clone()).into());
                    }
                    if s.jobs().is_committing(&id) {
                        return Err(ApiFailure::new(
                            StatusCode::CONFLICT,
                            "conflict",
                            "a proposal job is committing to this campaign; retry shortly",
                        ));
                    }
                    let mut strict = is_true(query.get("strict"));
                    let content_type = req_headers
                        .get(header::CONTENT_TYPE)
                        .and_then(|v| v.to_str().ok())
                        .unwrap_or("text/csv")
                        .to_ascii_lowercase();
                    let (rows, report): (Vec<IngestedRow>, IngestReport) =
                        if content_type.starts_with("application/json") {
                            let rows = match parse_json::<MeasurementsJson>(&body, "measurement rows")? {
                                MeasurementsJson::Rows(r) => r,
                                MeasurementsJson::Wrapped { rows, strict: s } => {
                                    strict |= s.unwrap_or(false);
                                    rows
                                }
                            };
                            ingest_json_rows(&rows, strict)?
                        } else if content_type.starts_with("text/csv") || content_type.starts_with("text/plain") {
                            ingest_csv(&body[..], strict)?
                        } else {
                            return Err(ApiFailure::new(
                                StatusCode::BAD_REQUEST,
                                "unsupported_media_type",
                                format!("expected text/csv or application/json, got '{content_type}'"),
                            ));
                        };
                    let store = s.store().clone();
                    let cid = id.clone();
                    let (added, total) = blocking(move || {
                        let added = store.append(&cid, &rows)?;
                        let total = store.load_observations(&cid)?.len();
                        Ok((added.len(), total))
                    })
                    .await?;
                    Ok(success(
                        StatusCode::OK,
                        &MeasurementsReply {
                            report,
                            appended: added,
                            observations: total,
                        },
                    ))
                }
                .await,
            )
        },
    )
    .await
}

async fn post_fit(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let s = state.clone();
    let path = format!("/campaigns/{id}/fit");
    idempotent(
        &state,
        &headers,
        scope(&Method::POST, &path),
        body.clone(),
        || async move {
            reply(
                async {
                    let campaign = load_campaign(&s, &id).await?;
                    check_trainable(&campaign.strength_observations())?;
                    let st = s.clone();
                    let snapshot = blocking(move || {
                        let model = campaign.fit_model()?;
                        let digest = st.store().save_snapshot(&campaign.id, &model)?;
                        let r = st.store().update(&campaign.id, |c, _| {
                            c.record_snapshot(digest.clone(), &model, Utc::now());
                            Ok(c.latest_snapshot().cloned())
                        })?;
                        st.cache_model(&campaign.id, &digest, model);
                        Ok(r)
                    })
                    .await?;
                    Ok(success(StatusCode::OK, &snapshot))
                }
                .await,
            )
        },
    )
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposeRequest {
    q: Option<usize>,
    #[serde(default)]
    seed: u64,
}

async fn post_propose(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let s = state.clone();
    let path = format!("/campaigns/{id}/propose");
    idempotent(
        &state,
        &headers,
        scope(&Method::POST, &path),
        body.clone(),
        || async move {
            reply(
                async {
                    let req: ProposeRequest = if body.is_empty() {
                        ProposeRequest { q: None, seed: 0 }
                    } else {
                        parse_json(&body, "propose request")?
                    };
                    let campaign = load_campaign(&s, &id).await?;
                    check_trainable(&campaign.strength_observations())?;
                    let q = req.q.unwrap_or(campaign.acquisition.q);
                    if q == 0 {
                        return Err(ApiFailure::new(
                            StatusCode::BAD_REQUEST,
                            "validation",
                            "q must be at least 1",
                        ));
                    }
                    let job = s.jobs().start(&id, q, req.seed).map_err(|running| {
                        ApiFailure::new(StatusCode::CONFLICT, "job_running", "a proposal job is already running")
                            .with_detail(json!({ "job_id": running }))
                    })?;
                    tokio::spawn(run_proposal(s.clone(), job.id.clone(), id.clone(), q, req.seed));
                    Ok(success(StatusCode::ACCEPTED, &job))
                }
                .await,
            )
        },
    )
    .await
}

async fn run_proposal(state: AppState, job_id: String, campaign: String, q: usize, seed: u64) {
    let jobs = || state.jobs();
    let _permit = jobs().slots.acquire().await;
    if jobs().is_cancelled(&job_id) {
        jobs().finish(&job_id, JobStatus::Cancelled, None, None);
        return;
    }
    jobs().set_status(&job_id, JobStatus::Running);
    let st = state.clone();
    let jid = job_id.clone();
    let outcome = blocking(move || {
        let c = st.store().load(&campaign)?;
        let mut proposal = c.plan_batch(q, seed, Utc::now())?;
        if st.jobs().is_cancelled(&jid) {
            return Ok(None);
        }
        st.jobs().set_committing(&campaign, true);
        let committed = (|| {
            let digest = st.store().save_snapshot(&campaign, &proposal.model)?;
            st.store()
                .update(&campaign, |c, _| c.commit_proposal(&mut proposal, Utc::now()))?;
            st.cache_model(&campaign, &digest, proposal.model.clone());
            Ok(proposal.batch.clone())
        })();
        st.jobs().set_committing(&campaign, false);
        committed.map(Some)
    })
    .await;
    match outcome {
        Ok(Some(batch)) => jobs().finish(&job_id, JobStatus::Done, Some(batch), None),
        Ok(None) => jobs().finish(&job_id, JobStatus::Cancelled, None, None),
        Err(f) => {
            tracing::warn!(job = %job_id, code = %f.error.code, message = %f.error.message, "proposal job failed");
            jobs().finish(&job_id, JobStatus::Failed, None, Some(f.error));
        }
    }
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    respond(match state.jobs().get(&id) {
        Some(job) => success(StatusCode::OK, &job),
        None => failure(ApiFailure::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("job '{id}' not found"),
        )),
    })
}

async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    respond(match state.jobs().cancel(&id) {
        Some(job) => success(StatusCode::ACCEPTED, &job),
        None => failure(ApiFailure::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("job '{id}' not found"),
        )),
    })
}

fn latest_digest(campaign: &Campaign) -> Result<String, ApiFailure> {
    campaign.latest_snapshot().map(|s| s.digest.clone()).ok_or_else(|| {
        Error::InsufficientData("campaign has no fitted model snapshot; fit or propose first".into()).into()
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    mixture: Mixture,
    ages: Vec<f64>,
}

async fn post_predict(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    respond(reply(
        async {
            let req: PredictRequest = parse_json(&body, "predict request")?;
            let campaign = load_campaign(&state, &id).await?;
            let digest = latest_digest(&campaign)?;
            let st = state.clone();
            let preds = blocking(move || st.model(&id, &digest)?.predict(&req.mixture, &req.ages)).await?;
            Ok(success(StatusCode::OK, &preds))
        }
        .await,
    ))
}

async fn get_empirical(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    respond(reply(
        async {
            let age: f64 = match query.get("age") {
                None => 28.0,
                Some(a) => a
                    .parse()
                    .map_err(|_| ApiFailure::new(StatusCode::BAD_REQUEST, "validation", format!("bad age '{a}'")))?,
            };
            let campaign = load_campaign(&state, &id).await?;
            Ok(success(StatusCode::OK, &campaign.empirical_pareto(age)?))
        }
        .await,
    ))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferredRequest {
    #[serde(default)]
    scenario: Scenario,
    candidates: Option<usize>,
    seed: Option<u64>,
}

async fn post_inferred(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    respond(reply(
        async {
            let req: InferredRequest = if body.iter().all(u8::is_ascii_whitespace) {
                InferredRequest::default()
            } else {
                parse_json(&body, "scenario")?
            };
            let campaign = load_campaign(&state, &id).await?;
            let digest = latest_digest(&campaign)?;
            let config = InferredConfig {
                candidates: req.candidates.unwrap_or(campaign.inferred.candidates),
                seed: req.seed.unwrap_or(campaign.inferred.seed),
            };
            if config.candidates == 0 || config.candidates > MAX_CANDIDATES {
                return Err(ApiFailure::new(
                    StatusCode::BAD_REQUEST,
                    "validation",
                    format!("candidates must be in 1..={MAX_CANDIDATES}"),
                ));
            }
            let st = state.clone();
            let frontier = blocking(move || {
                let model = st.model(&id, &digest)?;
                campaign.inferred_pareto(&model, &digest, &req.scenario, &config)
            })
            .await?;
            Ok(success(StatusCode::OK, &frontier))
        }
        .await,
    ))
}
