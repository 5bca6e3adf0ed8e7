//! HTTP API for the annotation tool and for predictions.
//!
//! Reads share a lock over the in-memory dataset. Every mutation goes through
//! one writer thread, which persists the whole dataset file before the
//! request is acknowledged.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use affordance::dataset::{write_dataset, Adjustment, AffordanceRecord, Source, Status, WriteLock};
use affordance::{rng, Featurizer, Point, Pose};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use crate::config::Resolved;
use crate::pipeline::{Data, Models};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message.to_string())
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl From<affordance::Error> for ApiError {
    fn from(e: affordance::Error) -> Self {
        use affordance::Error as E;
        let status = match &e {
            E::IllegalTransition { .. } => StatusCode::CONFLICT,
            E::Locked(_) => StatusCode::SERVICE_UNAVAILABLE,
            E::InvalidPose(_) | E::OutOfBounds { .. } | E::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    let body: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

enum Op {
    Transition(u64, Status),
    Adjust(u64, Option<Pose>, Adjustment),
    Create(String, Pose),
}

struct Job {
    op: Op,
    reply: oneshot::Sender<ApiResult<AffordanceRecord>>,
}

struct Inner {
    data: RwLock<Data>,
    models: Option<Models>,
    generate_seed: u64,
    default_samples: usize,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
    writer: mpsc::Sender<Job>,
}

impl AppState {
    /// Opens the dataset and, when all three exist, the vocabulary and models.
    pub fn open(r: &Resolved) -> anyhow::Result<Self> {
        let data = Data::load(r)?;
        let c = &r.config;
        let have_models = [&c.paths.vocab, &c.paths.classifier, &c.paths.vae]
            .iter()
            .all(|p| r.path(p).exists());
        let models = if have_models {
            Some(Models::load(r)?)
        } else {
            log::warn!("models not found; prediction requests will be refused");
            None
        };
        Ok(Self::new(data, models, c.seeds.generate))
    }

    pub fn new(data: Data, models: Option<Models>, generate_seed: u64) -> Self {
        let inner = Arc::new(Inner {
            data: RwLock::new(data),
            models,
            generate_seed,
            default_samples: 5,
        });
        let (tx, mut rx) = mpsc::channel::<Job>(64);
        let worker = Arc::clone(&inner);
        std::thread::Builder::new()
            .name("dataset-writer".into())
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    let _ = job.reply.send(apply(&worker, job.op));
                }
            })
            .expect("spawn writer thread");
        Self { inner, writer: tx }
    }

    async fn submit(&self, op: Op) -> ApiResult<AffordanceRecord> {
        let (reply, rx) = oneshot::channel();
        self.writer
            .send(Job { op, reply })
            .await
            .map_err(|_| ApiError::internal("writer stopped"))?;
        rx.await.map_err(|_| ApiError::internal("writer dropped the request"))?
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Data> {
        self.inner.data.read().unwrap_or_else(|e| e.into_inner())
    }
}

/// Applies one mutation and writes the dataset; memory is rolled back when
/// the write fails, so acknowledged state always matches the file.
fn apply(inner: &Inner, op: Op) -> ApiResult<AffordanceRecord> {
    let mut data = inner.data.write().unwrap_or_else(|e| e.into_inner());
    let index = |data: &Data, id: u64| {
        data.dataset
            .records
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| ApiError::not_found(format!("record {id}")))
    };
    let (slot, record) = match op {
        Op::Transition(id, status) => {
            let i = index(&data, id)?;
            let mut rec = data.dataset.records[i].clone();
            rec.transition(status)?;
            (Some(i), rec)
        }
        Op::Adjust(id, joints, adjustment) => {
            let i = index(&data, id)?;
            let mut rec = data.dataset.records[i].clone();
            let joints = match joints {
                Some(j) => j,
                None => adjustment.apply(&rec.pose)?,
            };
            rec.adjust(joints, adjustment)?;
            rec.out_of_frame = !affordance::dataset::in_frame(&rec.pose, rec.image_size[0], rec.image_size[1]);
            rec.features = featurize(&data, &rec);
            (Some(i), rec)
        }
        Op::Create(scene, pose) => {
            let template = data
                .dataset
                .records
                .iter()
                .find(|r| r.scene_id == scene)
                .ok_or_else(|| ApiError::not_found(format!("scene {scene}")))?;
            let mut rec = AffordanceRecord::hypothesis(
                data.dataset.next_id(),
                &template.scene_id,
                &template.show,
                &template.image,
                template.image_size,
                pose,
                Source::Manual,
            );
            rec.out_of_frame = !affordance::dataset::in_frame(&rec.pose, rec.image_size[0], rec.image_size[1]);
            rec.features = featurize(&data, &rec);
            (None, rec)
        }
    };
    let previous = match slot {
        Some(i) => Some(std::mem::replace(&mut data.dataset.records[i], record.clone())),
        None => {
            data.dataset.records.push(record.clone());
            data.dataset.sort();
            None
        }
    };
    if let Err(e) = persist(&data) {
        match previous {
            Some(old) => data.dataset.records[slot.expect("replaced a slot")] = old,
            None => data.dataset.records.retain(|r| r.id != record.id),
        }
        return Err(e);
    }
    Ok(record)
}

fn persist(data: &Data) -> ApiResult<()> {
    let _lock = WriteLock::acquire(&data.path)?;
    write_dataset(&data.dataset, &data.path)?;
    Ok(())
}

fn featurize(data: &Data, rec: &AffordanceRecord) -> Option<affordance::CropFeatures> {
    let img = data.image(rec).ok()?;
    data.featurizer.featurize_point(&img, rec.anchor).ok()
}

/// Record as served: feature blobs stay on the server.
fn public(rec: &AffordanceRecord) -> AffordanceRecord {
    AffordanceRecord {
        features: None,
        ..rec.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub show: String,
    pub image_size: [u32; 2],
    pub records: usize,
    pub hypotheses: usize,
}

async fn list_scenes(State(s): State<AppState>) -> Json<Vec<SceneSummary>> {
    let data = s.read();
    let mut out: Vec<SceneSummary> = Vec::new();
    for r in &data.dataset.records {
        let pos = match out.iter().position(|x| x.scene_id == r.scene_id) {
            Some(i) => i,
            None => {
                out.push(SceneSummary {
                    scene_id: r.scene_id.clone(),
                    show: r.show.clone(),
                    image_size: r.image_size,
                    records: 0,
                    hypotheses: 0,
                });
                out.len() - 1
            }
        };
        out[pos].records += 1;
        out[pos].hypotheses += usize::from(r.status == Status::Hypothesis);
    }
    out.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Json(out)
}

async fn scene_records(State(s): State<AppState>, UrlPath(scene): UrlPath<String>) -> ApiResult<Json<Vec<AffordanceRecord>>> {
    let data = s.read();
    let recs: Vec<AffordanceRecord> = data.dataset.records.iter().filter(|r| r.scene_id == scene).map(public).collect();
    if recs.is_empty() {
        return Err(ApiError::not_found(format!("scene {scene}")));
    }
    Ok(Json(recs))
}

async fn scene_image(State(s): State<AppState>, UrlPath(scene): UrlPath<String>) -> ApiResult<Response> {
    let path = {
        let data = s.read();
        let rec = data.scene(&scene).map_err(|_| ApiError::not_found(format!("scene {scene}")))?;
        data.dir().join(&rec.image)
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_record(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<AffordanceRecord>> {
    let data = s.read();
    data.dataset
        .get(id)
        .map(|r| Json(public(r)))
        .ok_or_else(|| ApiError::not_found(format!("record {id}")))
}

async fn accept(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<AffordanceRecord>> {
    Ok(Json(public(&s.submit(Op::Transition(id, Status::Accepted)).await?)))
}

async fn reject(State(s): State<AppState>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<AffordanceRecord>> {
    Ok(Json(public(&s.submit(Op::Transition(id, Status::Rejected)).await?)))
}

/// Body of an adjust request. `joints`, when given, is the full replacement
/// joint list; otherwise the server applies `scale` and `translate` itself.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustBody {
    #[serde(default)]
    pub joints: Option<Pose>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub translate: [f64; 2],
}

fn one() -> f64 {
    1.0
}

async fn adjust(State(s): State<AppState>, UrlPath(id): UrlPath<u64>, body: Bytes) -> ApiResult<Json<AffordanceRecord>> {
    let b: AdjustBody = parse_body(&body)?;
    let adjustment = Adjustment {
        scale: b.scale,
        translate: b.translate,
    };
    Ok(Json(public(&s.submit(Op::Adjust(id, b.joints, adjustment)).await?)))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    joints: Pose,
}

async fn create(State(s): State<AppState>, UrlPath(scene): UrlPath<String>, body: Bytes) -> ApiResult<(StatusCode, Json<AffordanceRecord>)> {
    let b: CreateBody = parse_body(&body)?;
    let rec = s.submit(Op::Create(scene, b.joints)).await?;
    Ok((StatusCode::CREATED, Json(public(&rec))))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictBody {
    point: Point,
    #[serde(default)]
    samples: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

const MAX_SAMPLES: usize = 100;

async fn predict(State(s): State<AppState>, UrlPath(scene): UrlPath<String>, body: Bytes) -> ApiResult<Response> {
    let b: PredictBody = parse_body(&body)?;
    if s.inner.models.is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no trained models are loaded"));
    }
    let samples = b.samples.unwrap_or(s.inner.default_samples);
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(ApiError::bad_request(format!("samples must be in 1..={MAX_SAMPLES}")));
    }
    let seed = b.seed.unwrap_or_else(|| rng::derive_seed(s.inner.generate_seed, b.point.x.to_bits() ^ b.point.y.to_bits().rotate_left(32)));
    let inner = Arc::clone(&s.inner);
    let out = tokio::task::spawn_blocking(move || {
        let data = inner.data.read().unwrap_or_else(|e| e.into_inner());
        if data.scene(&scene).is_err() {
            return Err(ApiError::not_found(format!("scene {scene}")));
        }
        let models = inner.models.as_ref().expect("checked above");
        crate::pipeline::generate(&data, models, &scene, b.point, samples, seed).map_err(|e| match e.downcast::<affordance::Error>() {
            Ok(e) => ApiError::from(e),
            Err(e) => ApiError::internal(e),
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out).into_response())
}

pub fn router(state: AppState, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/scenes", get(list_scenes))
        .route("/api/scenes/{scene}/records", get(scene_records).post(create))
        .route("/api/scenes/{scene}/image", get(scene_image))
        .route("/api/scenes/{scene}/predict", post(predict))
        .route("/api/records/{id}", get(get_record))
        .route("/api/records/{id}/accept", post(accept))
        .route("/api/records/{id}/reject", post(reject))
        .route("/api/records/{id}/adjust", post(adjust))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: AppState, addr: &str, ui: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
