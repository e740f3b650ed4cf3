//! HTTP API over the [`Engine`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use gravekit_core::workflow::Action;
use gravekit_core::BBox;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::export::Format;
use crate::ingest::{NewDocument, PageInput, ScaleConfig};
use crate::records::RecordError;
use crate::service::{AssembleReport, Engine, ServiceError};
use crate::stats::EfdMode;
use crate::store::StoreError;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            ServiceError::Store(s) => match s {
                StoreError::UnknownDocument(_) | StoreError::UnknownPage(_) | StoreError::UnknownRecord(_) => {
                    (S::NOT_FOUND, "not_found")
                }
                StoreError::StaleVersion { .. } => (S::CONFLICT, "stale_version"),
                StoreError::DuplicateDocument(_) | StoreError::DuplicateDetection(_) | StoreError::DuplicateRecord(_) => {
                    (S::CONFLICT, "duplicate")
                }
                StoreError::DuplicateGraveId(_) => (S::UNPROCESSABLE_ENTITY, "duplicate_grave_id"),
                StoreError::Ingest(_) => (S::UNPROCESSABLE_ENTITY, "invalid_document"),
                StoreError::Sqlite(_) | StoreError::Corrupt(_) => (S::INTERNAL_SERVER_ERROR, "storage"),
            },
            ServiceError::Record(r) => match r {
                RecordError::IllegalTransition(_) => (S::CONFLICT, "illegal_transition"),
                RecordError::DuplicateGraveId(_) => (S::UNPROCESSABLE_ENTITY, "duplicate_grave_id"),
                RecordError::Payload(_) => (S::UNPROCESSABLE_ENTITY, "invalid_payload"),
            },
            ServiceError::Parse(_) => (S::UNPROCESSABLE_ENTITY, "invalid_detections"),
            ServiceError::Stats(_) => (S::UNPROCESSABLE_ENTITY, "stats"),
            ServiceError::QueueEmpty(_) => (S::NOT_FOUND, "queue_empty"),
            ServiceError::BadRequest(_) => (S::BAD_REQUEST, "bad_request"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum JobState {
    Running,
    Done { report: AssembleReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub id: String,
    pub document_id: String,
    #[serde(flatten)]
    pub state: JobState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub token: String,
    pub document_id: String,
    /// Record the session's next queue request starts from, if known.
    pub queue_cursor: Option<String>,
    pub created_at: u64,
}

pub struct AppState {
    engine: Arc<Engine>,
    token: Option<String>,
    jobs: Mutex<HashMap<String, Job>>,
    sessions: Mutex<HashMap<String, Session>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            engine,
            token,
            jobs: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    fn next_n(&self) -> u64 {
        self.counter.fetch_add(1, Ordering::Relaxed) + 1
    }
}

async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&Engine) -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/documents", post(create_document))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/detections", post(post_detections))
        .route("/documents/{id}/assemble", post(start_assemble))
        .route("/documents/{id}/queue/next", get(queue_next))
        .route("/documents/{id}/export", get(export))
        .route("/documents/{id}/stats/rose", get(stats_rose))
        .route("/documents/{id}/stats/outlines", get(stats_outlines))
        .route("/documents/{id}/stats/pca", get(stats_pca))
        .route("/jobs/{id}", get(get_job))
        .route("/sessions", post(create_session))
        .route("/sessions/{token}", get(get_session))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/step", post(post_step))
        .route("/pages/{id}/image", get(page_image))
        .route("/pages/{id}/crop", get(page_crop))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PageBody {
    image_base64: String,
    #[serde(default)]
    dpi: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentBody {
    #[serde(default)]
    id: Option<String>,
    title: String,
    #[serde(default)]
    source_ref: String,
    #[serde(flatten)]
    scale: ScaleConfig,
    pages: Vec<PageBody>,
}

async fn create_document(State(state): State<Arc<AppState>>, Json(body): Json<DocumentBody>) -> ApiResult<Response> {
    let mut pages = Vec::with_capacity(body.pages.len());
    for (i, p) in body.pages.into_iter().enumerate() {
        let image = base64::engine::general_purpose::STANDARD
            .decode(p.image_base64.as_bytes())
            .map_err(|e| ApiError::bad_request(format!("page {i}: {e}")))?;
        pages.push(PageInput { image, dpi: p.dpi });
    }
    let doc = NewDocument {
        id: body.id,
        title: body.title,
        source_ref: body.source_ref,
        scale: body.scale,
        pages,
    };
    let created = blocking(&state, move |e| e.import_document(&doc)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_document(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (doc, pages) = blocking(&state, move |e| Ok((e.document(&id)?, e.pages(&id)?))).await?;
    Ok(Json(json!({ "document": doc, "pages": pages })))
}

async fn post_detections(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let n = blocking(&state, move |e| e.import_detections(&id, &body)).await?;
    Ok(Json(json!({ "imported": n })))
}

async fn start_assemble(State(state): State<Arc<AppState>>, Path(doc_id): Path<String>) -> ApiResult<Response> {
    {
        let d = doc_id.clone();
        blocking(&state, move |e| e.document(&d)).await?;
    }
    let job = {
        let mut jobs = state.jobs.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(running) = jobs
            .values()
            .find(|j| j.document_id == doc_id && j.state == JobState::Running)
        {
            return Ok((StatusCode::ACCEPTED, Json(running.clone())).into_response());
        }
        let job = Job {
            id: format!("job{}", state.next_n()),
            document_id: doc_id.clone(),
            state: JobState::Running,
        };
        jobs.insert(job.id.clone(), job.clone());
        job
    };
    let st = state.clone();
    let job_id = job.id.clone();
    tokio::task::spawn_blocking(move || {
        let result = st.engine.assemble(&doc_id);
        let mut jobs = st.jobs.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(j) = jobs.get_mut(&job_id) {
            j.state = match result {
                Ok(report) => JobState::Done { report },
                Err(e) => JobState::Failed { error: e.to_string() },
            };
        }
    });
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    let jobs = state.jobs.lock().unwrap_or_else(|p| p.into_inner());
    jobs.get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown job {id:?}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionBody {
    document_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<SessionBody>) -> ApiResult<Response> {
    let d = body.document_id.clone();
    blocking(&state, move |e| e.document(&d)).await?;
    let created_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let n = state.next_n();
    let session = Session {
        token: format!("s{n:x}-{created_at:x}"),
        document_id: body.document_id,
        queue_cursor: None,
        created_at,
    };
    state
        .sessions
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(session.token.clone(), session.clone());
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(token): Path<String>) -> ApiResult<Json<Session>> {
    let sessions = state.sessions.lock().unwrap_or_else(|p| p.into_inner());
    sessions
        .get(&token)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", "no such session"))
}

const SESSION_HEADER: &str = "x-session";

async fn queue_next(State(state): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let session = headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    if let Some(token) = &session {
        let sessions = state.sessions.lock().unwrap_or_else(|p| p.into_inner());
        match sessions.get(token) {
            Some(s) if s.document_id == id => {}
            _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {token:?} for this document"))),
        }
    }
    let item = blocking(&state, move |e| e.next_in_queue(&id)).await?;
    if let Some(token) = session {
        if let Some(s) = state.sessions.lock().unwrap_or_else(|p| p.into_inner()).get_mut(&token) {
            s.queue_cursor = Some(item.record.record_id.clone());
        }
    }
    Ok(Json(item).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    version: u64,
    action: Action,
    #[serde(default)]
    payload: Value,
}

async fn post_step(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: StepBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload", e.to_string()))?;
    let r = blocking(&state, move |e| e.apply_step(&id, Some(body.version), body.action, &body.payload)).await?;
    Ok(Json(r).into_response())
}

async fn get_record(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = blocking(&state, move |e| e.record(&id)).await?;
    Ok(Json(r).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    all: bool,
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let format: Format = q
        .format
        .as_deref()
        .unwrap_or("csv")
        .parse()
        .map_err(|_| ApiError::bad_request("format must be csv or json"))?;
    let text = blocking(&state, move |e| e.export(&id, format, q.all)).await?;
    let ct = match format {
        Format::Csv => "text/csv; charset=utf-8",
        Format::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, ct)], text).into_response())
}

#[derive(Deserialize)]
struct RoseQuery {
    #[serde(default = "default_sector")]
    sector: u32,
    #[serde(default)]
    all: bool,
}

fn default_sector() -> u32 {
    10
}

async fn stats_rose(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<RoseQuery>) -> ApiResult<Response> {
    let rose = blocking(&state, move |e| e.rose(&id, q.sector, q.all)).await?;
    Ok(Json(rose).into_response())
}

#[derive(Deserialize)]
struct AllQuery {
    #[serde(default)]
    all: bool,
}

async fn stats_outlines(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<AllQuery>) -> ApiResult<Response> {
    let outlines = blocking(&state, move |e| e.outlines(&id, q.all)).await?;
    Ok(Json(outlines).into_response())
}

#[derive(Deserialize)]
struct PcaQuery {
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    all: bool,
    #[serde(default)]
    normalize: Option<String>,
    #[serde(default)]
    format: Option<String>,
}

fn default_k() -> usize {
    2
}

async fn stats_pca(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<PcaQuery>) -> ApiResult<Response> {
    let mode = match q.normalize.as_deref() {
        None | Some("workflow") => EfdMode::Workflow,
        Some("first_harmonic") => EfdMode::FirstHarmonic,
        Some(other) => return Err(ApiError::bad_request(format!("unknown normalization {other:?}"))),
    };
    let result = blocking(&state, move |e| e.pca(&id, q.k, q.all, mode)).await?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(result).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], crate::stats::pca_csv(&result)).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn page_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(blocking(&state, move |e| e.page_image(&id)).await?))
}

#[derive(Deserialize)]
struct CropQuery {
    bbox: String,
}

fn parse_bbox(s: &str) -> Option<BBox> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    let b = BBox::from_array(v.try_into().ok()?);
    b.is_valid().then_some(b)
}

async fn page_crop(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<CropQuery>) -> ApiResult<Response> {
    let bbox = parse_bbox(&q.bbox).ok_or_else(|| ApiError::bad_request("bbox must be x_min,y_min,x_max,y_max"))?;
    Ok(png(blocking(&state, move |e| e.page_crop(&id, &bbox)).await?))
}

pub async fn serve(engine: Arc<Engine>, addr: &str, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(engine, token))).await
}
