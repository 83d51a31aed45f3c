//! HTTP JSON API over the outlierscope engine.
//!
//! Tables are loaded once at startup and shared read-only. Detector runs,
//! searchlight sweeps and subset scans execute through the same
//! [`Job`](outlierscope::pipeline::Job) path as the command line, persist their
//! report files into a runs directory, and are indexed in memory by their
//! deterministic run id.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | GET | `/datasets` | |
//! | GET | `/datasets/{name}/summary` | |
//! | GET | `/defaults?dataset=` | |
//! | POST | `/pivot?dataset=` | `PivotSpec` |
//! | POST | `/runs?dataset=` | `RunConfig` |
//! | POST | `/searchlight?dataset=` | `SearchlightConfig` |
//! | POST | `/subset-scan?dataset=` | `SubsetScanRequest` |
//! | GET | `/runs/{id}` | |
//! | GET | `/runs/{id}/series` | |
//! | GET | `/runs/{id}/manifest` | |
//!
//! `dataset` defaults to the first loaded table. Every response carries an
//! `x-manifest-hash` header: the run manifest hash for run artifacts, the
//! dataset manifest hash for dataset-derived responses, and a hash over all
//! loaded datasets otherwise.

// Handlers return `ApiError` by value; it is built once per failed request.
#![allow(clippy::result_large_err)]

mod error;
mod runs;

use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use outlierscope::aggregate::{pivot, PivotSpec};
use outlierscope::ingest::{summarize, DatasetSummary, DischargeTable};
use outlierscope::pipeline::{Job, RunConfig};
use outlierscope::report::{canonical_json, dataset_fingerprint, sha256_hex, PIPELINE_VERSION};
use outlierscope::searchlight::SearchlightConfig;
use outlierscope::subsetscan::SubsetScanRequest;

pub use error::{ApiError, ErrorBody};
pub use runs::{RunHandle, RunStatus};

use runs::{Artifact, Launch, RunEntry, RunIndex};

pub const MANIFEST_HASH_HEADER: &str = "x-manifest-hash";

/// A loaded table with the identity facts the API reports about it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub table: Arc<DischargeTable>,
    pub summary: DatasetSummary,
    pub fingerprint: String,
    /// Hash of the canonical `{name, fingerprint, row_count, pipeline_version}`.
    pub manifest_hash: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, table: DischargeTable) -> Self {
        let name = name.into();
        let fingerprint = dataset_fingerprint(&table);
        let summary = summarize(&table);
        let manifest = serde_json::json!({
            "name": name,
            "fingerprint": fingerprint,
            "row_count": summary.row_count,
            "pipeline_version": PIPELINE_VERSION,
        });
        let manifest_hash = sha256_hex(canonical_json(&manifest).expect("json value serializes").as_bytes());
        Self {
            name,
            table: Arc::new(table),
            summary,
            fingerprint,
            manifest_hash,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where run report files are written.
    pub runs_dir: PathBuf,
    /// How long a launching request waits before answering with a running
    /// handle instead of the finished one.
    pub sync_timeout: Duration,
    /// Built explorer assets, served under `/ui` when present.
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(runs_dir: impl Into<PathBuf>) -> Self {
        Self {
            runs_dir: runs_dir.into(),
            sync_timeout: Duration::from_secs(30),
            ui_dir: None,
        }
    }
}

struct AppState {
    datasets: Vec<Arc<Dataset>>,
    runs: RunIndex,
    config: ServiceConfig,
    service_hash: String,
}

impl AppState {
    fn dataset(&self, name: Option<&str>) -> Result<Arc<Dataset>, ApiError> {
        match name {
            None => Ok(self.datasets[0].clone()),
            Some(name) => {
                self.datasets.iter().find(|d| d.name == name).cloned().ok_or_else(|| {
                    ApiError::unknown_dataset(name, self.datasets.iter().map(|d| d.name.clone()).collect())
                })
            }
        }
    }
}

/// Builds the API router. At least one dataset is required and names must
/// be unique.
pub fn router(datasets: Vec<Dataset>, config: ServiceConfig) -> std::io::Result<Router> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, msg);
    if datasets.is_empty() {
        return Err(invalid("at least one dataset must be loaded".into()));
    }
    for (i, d) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|o| o.name == d.name) {
            return Err(invalid(format!("dataset name '{}' is used twice", d.name)));
        }
    }
    let hashes: Vec<&str> = datasets.iter().map(|d| d.manifest_hash.as_str()).collect();
    let service_hash = sha256_hex(canonical_json(&hashes).map_err(|e| invalid(e.to_string()))?.as_bytes());
    let ui_dir = config.ui_dir.clone();
    let state = Arc::new(AppState {
        datasets: datasets.into_iter().map(Arc::new).collect(),
        runs: RunIndex::default(),
        config,
        service_hash,
    });

    let mut app = Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{name}/summary", get(dataset_summary))
        .route("/defaults", get(defaults))
        .route("/pivot", post(pivot_handler))
        .route("/runs", post(post_run))
        .route("/searchlight", post(post_searchlight))
        .route("/subset-scan", post(post_subset_scan))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/series", get(get_series))
        .route("/runs/{id}/manifest", get(get_manifest));
    app = match ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir)),
        None => app.route("/ui", get(ui_missing)).route("/ui/{*rest}", get(ui_missing)),
    };
    Ok(app
        .fallback(unknown_route)
        .with_state(state.clone())
        .layer(axum::middleware::map_response_with_state(state, default_hash)))
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(datasets: Vec<Dataset>, config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let app = router(datasets, config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
}

async fn default_hash(State(state): State<Arc<AppState>>, mut response: Response) -> Response {
    if !response.headers().contains_key(MANIFEST_HASH_HEADER) {
        set_hash(&mut response, &state.service_hash);
    }
    response
}

fn set_hash(response: &mut Response, hash: &str) {
    if let Ok(value) = HeaderValue::from_str(hash) {
        response.headers_mut().insert(MANIFEST_HASH_HEADER, value);
    }
}

fn with_hash(response: impl IntoResponse, hash: &str) -> Response {
    let mut response = response.into_response();
    set_hash(&mut response, hash);
    response
}

/// Pre-serialized canonical JSON.
fn json_bytes(status: StatusCode, body: impl Into<axum::body::Body>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body.into()).into_response()
}

fn canonical<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    Ok(json_bytes(StatusCode::OK, canonical_json(value)?))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_json(&e))
}

#[derive(Debug, Default, Deserialize)]
struct DatasetQuery {
    dataset: Option<String>,
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    name: &'a str,
    fingerprint: &'a str,
    summary: &'a DatasetSummary,
}

impl<'a> From<&'a Dataset> for DatasetInfo<'a> {
    fn from(d: &'a Dataset) -> Self {
        Self {
            name: &d.name,
            fingerprint: &d.fingerprint,
            summary: &d.summary,
        }
    }
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let list: Vec<DatasetInfo> = state.datasets.iter().map(|d| DatasetInfo::from(&**d)).collect();
    canonical(&list)
}

async fn dataset_summary(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> Result<Response, ApiError> {
    let dataset = state
        .datasets
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| ApiError::not_found("dataset", &name))?;
    Ok(with_hash(
        canonical(&DatasetInfo::from(&**dataset))?,
        &dataset.manifest_hash,
    ))
}

/// Request defaults derived from the dataset, so that forms and the engine
/// agree: the first dimension as primary, the others as candidates, the
/// earliest year as base.
#[derive(Serialize)]
struct Defaults {
    dataset: String,
    dimensions: Vec<String>,
    years: Vec<i32>,
    measures: [&'static str; 3],
    pivot: PivotSpec,
    run: RunConfig,
    searchlight: SearchlightConfig,
    subset_scan: SubsetScanRequest,
}

async fn defaults(State(state): State<Arc<AppState>>, Query(q): Query<DatasetQuery>) -> Result<Response, ApiError> {
    let dataset = state.dataset(q.dataset.as_deref())?;
    let table = &dataset.table;
    let dimensions = table.dimension_names();
    let years = table.distinct_years().to_vec();
    let base_year = years.first().copied();
    let first = dimensions.first().cloned().unwrap_or_default();

    let pivot = PivotSpec {
        row_dims: vec![first.clone()],
        rebase: base_year,
        ..PivotSpec::new(&[], outlierscope::aggregate::Measure::Count)
    };
    let run = RunConfig {
        row_dims: vec![first.clone()],
        base_year,
        ..RunConfig::default()
    };
    let searchlight = SearchlightConfig {
        dimensions: dimensions.clone(),
        base_year,
        ..SearchlightConfig::default()
    };
    let subset_scan = SubsetScanRequest {
        primary_dim: first,
        candidate_dims: dimensions.iter().skip(1).cloned().collect(),
        base_year,
        ..SubsetScanRequest::default()
    };
    let body = Defaults {
        dataset: dataset.name.clone(),
        dimensions,
        years,
        measures: ["count", "total_cost", "mean_cost"],
        pivot,
        run,
        searchlight,
        subset_scan,
    };
    Ok(with_hash(canonical(&body)?, &dataset.manifest_hash))
}

async fn pivot_handler(
    State(state): State<Arc<AppState>>,
    Query(q): Query<DatasetQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let dataset = state.dataset(q.dataset.as_deref())?;
    let spec: PivotSpec = parse_body(&body)?;
    spec.validate(&dataset.table)?;
    let table = dataset.table.clone();
    let matrix = tokio::task::spawn_blocking(move || pivot(&table, &spec))
        .await
        .map_err(|e| ApiError::internal(format!("pivot task failed: {e}")))??;
    Ok(with_hash(canonical(&matrix)?, &dataset.manifest_hash))
}

async fn post_run(
    State(state): State<Arc<AppState>>,
    Query(q): Query<DatasetQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let job = Job::OutlierRun(parse_body(&body)?);
    launch(state, q, job).await
}

async fn post_searchlight(
    State(state): State<Arc<AppState>>,
    Query(q): Query<DatasetQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let job = Job::Searchlight(parse_body(&body)?);
    launch(state, q, job).await
}

async fn post_subset_scan(
    State(state): State<Arc<AppState>>,
    Query(q): Query<DatasetQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let job = Job::SubsetScan(parse_body(&body)?);
    launch(state, q, job).await
}

/// Validates synchronously, then executes on a blocking worker. Answers with
/// the finished handle, or with a running one once the timeout elapses; the
/// run continues either way.
async fn launch(state: Arc<AppState>, q: DatasetQuery, job: Job) -> Result<Response, ApiError> {
    let dataset = state.dataset(q.dataset.as_deref())?;
    job.validate(&dataset.table)?;
    let run_id = job.run_id(&dataset.fingerprint)?;
    let entry = match state.runs.launch(&run_id, job.kind(), &dataset.name) {
        Launch::Existing(entry) => entry,
        Launch::Started => {
            log::info!("run {run_id} ({}) started on '{}'", job.kind(), dataset.name);
            let worker_state = state.clone();
            let id = run_id.clone();
            let task = tokio::task::spawn_blocking(move || {
                let s = &worker_state;
                std::panic::catch_unwind(AssertUnwindSafe(|| {
                    runs::execute(&s.runs, &dataset, &job, &id, &s.config.runs_dir)
                }))
                .unwrap_or_else(|_| runs::fail(&s.runs, &id, "run panicked"))
            });
            match tokio::time::timeout(state.config.sync_timeout, task).await {
                Ok(Ok(entry)) => entry,
                Ok(Err(e)) => return Err(ApiError::internal(format!("run task failed: {e}"))),
                Err(_) => state.runs.get(&run_id).expect("launched run is indexed"),
            }
        }
    };
    Ok(handle_response(entry))
}

fn handle_response(entry: RunEntry) -> Response {
    let status = match entry.handle.status {
        RunStatus::Done => StatusCode::OK,
        RunStatus::Running => StatusCode::ACCEPTED,
        RunStatus::Failed => StatusCode::UNPROCESSABLE_ENTITY,
    };
    let mut response = (status, Json(&entry.handle)).into_response();
    if let Some(hash) = &entry.manifest_hash {
        set_hash(&mut response, hash);
    }
    response
}

async fn artifact(state: &AppState, id: &str, which: Artifact) -> Result<Response, ApiError> {
    let entry = state.runs.get(id).ok_or_else(|| ApiError::not_found("run", id))?;
    let (Some(files), Some(hash)) = (&entry.files, &entry.manifest_hash) else {
        return Ok(handle_response(entry));
    };
    let bytes = tokio::fs::read(which.path(files))
        .await
        .map_err(|e| ApiError::internal(format!("reading artifact of run '{id}': {e}")))?;
    Ok(with_hash(json_bytes(StatusCode::OK, bytes), hash))
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, Artifact::Report).await
}

async fn get_series(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, Artifact::Series).await
}

async fn get_manifest(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, Artifact::Manifest).await
}

async fn ui_missing() -> ApiError {
    ApiError::not_found("explorer ui", "/ui (not built)")
}

async fn unknown_route(uri: Uri) -> ApiError {
    ApiError::not_found("route", uri.path())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book_service {}
