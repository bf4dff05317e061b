//! Local HTTP API over a model registry.
//!
//! All routes live under `/api`. Responses are JSON except the sample grid,
//! which is returned as `image/png`. Projections and toonify runs are
//! background jobs polled through `/api/jobs/{id}`.

use std::collections::{BTreeMap, HashMap};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ganblend_core::checkpoint::{self, ModelId, ModelInfo, ModelRegistry};
use ganblend_core::projector::{self, LatentFile, ProjectionConfig};
use ganblend_core::sampling::{render_grid_png, sample_latent, SampleGridSpec};
use ganblend_core::tensor::{decode_png_bytes, encode_png_bytes};
use ganblend_core::{
    activations, blend_checkpoints, describe_schedule, BlendSchedule, Checkpoint, ExecMode, GeneratorConfig,
    MappingPolicy, NoiseSpec, ScheduleRow,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Default)]
pub struct AppState {
    pub registry: ModelRegistry,
    jobs: Mutex<HashMap<String, JobStatus>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn model(&self, id: &str) -> Result<Arc<Checkpoint>, ApiError> {
        Ok(self.registry.get(&ModelId::from(id))?)
    }

    fn set_job(&self, id: &str, status: JobStatus) {
        self.jobs.lock().expect("job table poisoned").insert(id.to_owned(), status);
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done { result: Value },
    Failed { error: String },
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl From<ganblend_core::Error> for ApiError {
    fn from(e: ganblend_core::Error) -> Self {
        let status = match e {
            ganblend_core::Error::NotFound(_) => StatusCode::NOT_FOUND,
            ganblend_core::Error::Io { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/models", get(list_models).post(add_model))
        .route("/models/{id}/sample.png", get(sample_png))
        .route("/models/{id}/activations", get(activation_summary))
        .route("/blend", post(blend))
        .route("/schedule/preview", get(schedule_preview))
        .route("/project", post(submit_project))
        .route("/toonify", post(submit_toonify))
        .route("/jobs/{id}", get(job_status));
    Router::new().nest("/api", api).with_state(state)
}

/// Bind the loopback interface and serve until interrupted.
pub fn serve(port: u16, preload: &[PathBuf]) -> anyhow::Result<()> {
    let state = AppState::new();
    for path in preload {
        let ckpt = checkpoint::load(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let id = state.registry.put_named(&name, ckpt);
        eprintln!("loaded {} as {id}", path.display());
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
        eprintln!("listening on http://{addr}/api");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

/// Run a CPU-bound closure off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Value> {
    let models: Vec<ModelInfo> = state.registry.list();
    Json(json!({ "models": models }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddModel {
    path: PathBuf,
    #[serde(default)]
    name: Option<String>,
}

/// Register a checkpoint given either `{"path": ...}` as JSON or the GWTC
/// bytes as the request body.
async fn add_model(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let (name, ckpt) = if is_json {
        let req: AddModel = serde_json::from_slice(&body).map_err(|e| ApiError::bad(e.to_string()))?;
        let name = req
            .name
            .or_else(|| req.path.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_default();
        let path = req.path;
        (name, blocking(move || Ok(checkpoint::load(&path)?)).await?)
    } else {
        (String::new(), blocking(move || Ok(checkpoint::from_bytes(&body)?)).await?)
    };
    let id = state.registry.put_named(&name, ckpt);
    Ok(Json(json!({ "id": id })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlendRequest {
    base_id: String,
    transfer_id: String,
    schedule: BlendSchedule,
    #[serde(default)]
    mapping: MappingPolicy,
    #[serde(default)]
    name: Option<String>,
}

async fn blend(State(state): State<Arc<AppState>>, Json(req): Json<BlendRequest>) -> ApiResult<Json<Value>> {
    let base = state.model(&req.base_id)?;
    let transfer = state.model(&req.transfer_id)?;
    let (schedule, mapping) = (req.schedule, req.mapping);
    let ckpt = blocking(move || Ok(blend_checkpoints(&base, &transfer, &schedule, mapping)?)).await?;
    let id = state.registry.put_named(req.name.as_deref().unwrap_or(""), ckpt);
    Ok(Json(json!({ "id": id })))
}

#[derive(Deserialize)]
struct SampleQuery {
    seed: Option<u64>,
    count: Option<usize>,
    columns: Option<usize>,
}

async fn sample_png(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Response> {
    let ckpt = state.model(&id)?;
    let d = SampleGridSpec::default();
    let spec = SampleGridSpec {
        seed: q.seed.unwrap_or(d.seed),
        count: q.count.unwrap_or(d.count),
        columns: q.columns.unwrap_or(d.columns),
    };
    let png = blocking(move || Ok(render_grid_png(&ckpt, &spec, ExecMode::Parallel)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct ActivationQuery {
    seed: Option<u64>,
    tap_r: u32,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorSummary {
    pub shape: Vec<usize>,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
}

/// Features at `tap_r` for the first sample of grid `seed`.
async fn activation_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ActivationQuery>,
) -> ApiResult<Json<TensorSummary>> {
    let ckpt = state.model(&id)?;
    let seed = q.seed.unwrap_or(0);
    let tap = blocking(move || {
        let z = sample_latent(ckpt.meta(), seed, 0);
        Ok(activations(&ckpt, &z, NoiseSpec::new(seed), q.tap_r)?)
    })
    .await?;
    let data = tap.data();
    Ok(Json(TensorSummary {
        shape: tap.dims().to_vec(),
        min: data.iter().copied().fold(f32::INFINITY, f32::min),
        max: data.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        mean: data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64,
    }))
}

/// Build a schedule from flat query parameters: `kind` plus that kind's
/// fields, `alphas=4:1,8:0.5` for tables, or the whole schedule as JSON in
/// `schedule`. Bands come from `model_id` when given, otherwise the desk
/// config.
pub fn schedule_from_query(q: &BTreeMap<String, String>) -> Result<BlendSchedule, String> {
    if let Some(src) = q.get("schedule") {
        return serde_json::from_str(src).map_err(|e| e.to_string());
    }
    let mut obj = serde_json::Map::new();
    for (k, v) in q {
        let value = match k.as_str() {
            "model_id" => continue,
            "kind" | "low_source" => Value::String(v.clone()),
            "alphas" => {
                let mut table = serde_json::Map::new();
                for pair in v.split(',').filter(|p| !p.is_empty()) {
                    let (r, a) = pair.split_once(':').ok_or_else(|| format!("bad alphas entry `{pair}`"))?;
                    let a: f64 = a.parse().map_err(|_| format!("bad alpha `{a}`"))?;
                    table.insert(r.to_owned(), json!(a));
                }
                Value::Object(table)
            }
            _ => match (v.parse::<u64>(), v.parse::<f64>()) {
                (Ok(n), _) => json!(n),
                (_, Ok(x)) => json!(x),
                _ => return Err(format!("`{k}` must be a number, got `{v}`")),
            },
        };
        obj.insert(k.clone(), value);
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())
}

async fn schedule_preview(
    State(state): State<Arc<AppState>>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Vec<ScheduleRow>>> {
    let config = match q.get("model_id") {
        Some(id) => state.model(id)?.meta().clone(),
        None => GeneratorConfig::desk(),
    };
    let schedule = schedule_from_query(&q).map_err(ApiError::bad)?;
    Ok(Json(describe_schedule(&schedule, &config)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectRequest {
    model_id: String,
    png: String,
    #[serde(default)]
    cfg: ProjectionConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToonifyRequest {
    base_id: String,
    blended_id: String,
    png: String,
    #[serde(default)]
    cfg: ProjectionConfig,
}

fn decode_target(png_b64: &str) -> ApiResult<ganblend_core::Image> {
    let bytes = BASE64.decode(png_b64.trim()).map_err(|e| ApiError::bad(format!("png base64: {e}")))?;
    Ok(decode_png_bytes(&bytes)?)
}

fn png_b64(image: &ganblend_core::Image) -> Result<String, ganblend_core::Error> {
    Ok(BASE64.encode(encode_png_bytes(image)?))
}

/// Validate up front, then run `work` as a background job.
fn spawn_job<F>(state: &Arc<AppState>, work: F) -> Json<Value>
where
    F: FnOnce() -> Result<Value, ganblend_core::Error> + Send + 'static,
{
    let id = format!("j{}", state.next_job.fetch_add(1, Ordering::Relaxed) + 1);
    state.set_job(&id, JobStatus::Running);
    let (state, job) = (Arc::clone(state), id.clone());
    tokio::task::spawn_blocking(move || {
        let status = match work() {
            Ok(result) => JobStatus::Done { result },
            Err(e) => JobStatus::Failed { error: e.to_string() },
        };
        state.set_job(&job, status);
    });
    Json(json!({ "job_id": id }))
}

async fn submit_project(State(state): State<Arc<AppState>>, Json(req): Json<ProjectRequest>) -> ApiResult<Json<Value>> {
    let ckpt = state.model(&req.model_id)?;
    let target = decode_target(&req.png)?;
    req.cfg.validate()?;
    let (cfg, model_id) = (req.cfg, req.model_id);
    Ok(spawn_job(&state, move || {
        let result = projector::project(&ckpt, &target, &cfg)?;
        Ok(json!({
            "latent": LatentFile::from_result(&result, Some(model_id)),
            "loss_trace": result.loss_trace,
            "reconstruction_png": png_b64(&result.reconstruction)?,
        }))
    }))
}

async fn submit_toonify(State(state): State<Arc<AppState>>, Json(req): Json<ToonifyRequest>) -> ApiResult<Json<Value>> {
    let base = state.model(&req.base_id)?;
    let blended = state.model(&req.blended_id)?;
    let target = decode_target(&req.png)?;
    req.cfg.validate()?;
    let (cfg, base_id) = (req.cfg, req.base_id);
    Ok(spawn_job(&state, move || {
        let out = projector::toonify(&base, &blended, &target, &cfg)?;
        Ok(json!({
            "latent": LatentFile::from_result(&out.projection, Some(base_id)),
            "loss_trace": out.projection.loss_trace,
            "reconstruction_png": png_b64(&out.projection.reconstruction)?,
            "toonified_png": png_b64(&out.image)?,
        }))
    }))
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    state
        .jobs
        .lock()
        .expect("job table poisoned")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job `{id}`")))
}
