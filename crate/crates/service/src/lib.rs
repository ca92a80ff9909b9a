//! HTTP facade for human-in-the-loop annotation.
//!
//! A single writer thread owns the [`Session`]; every mutation is checkpointed
//! to the state directory and then published as an immutable [`Snapshot`].
//! Handlers only ever read the latest snapshot or enqueue a command, so
//! responses never observe a half-applied transition.
//!
//! | method | path                                   | body / result |
//! |--------|----------------------------------------|---------------|
//! | GET    | `/status`                              | cycle, pool sizes, budget, `busy` |
//! | GET    | `/queue`                               | pending queue items, score-descending |
//! | GET    | `/sample/{id}/image`                   | RGB PNG |
//! | GET    | `/sample/{id}/prediction`              | index-mask PNG (argmax of the current model) |
//! | GET    | `/sample/{id}/uncertainty`             | grayscale PNG, value / ln K mapped to 0..255 |
//! | POST   | `/labels`                              | `{"id": .., "mask": <base64 index-mask PNG>}` |
//! | POST   | `/cycle/advance`                       | 202; runs retrain + score + select in the background |
//! | GET    | `/metrics`                             | cycle records |
//!
//! Errors are `{"error": {"code": .., "message": ..}}` with 404 for unknown
//! ids, 409 for state conflicts and 422 for malformed input.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot, watch};
use tower_http::services::ServeDir;

use dcau_core::acquisition::{Strategy, UncertaintyForm, WeightVector};
use dcau_core::config::AnnotationMode;
use dcau_core::dataset::{decode_mask_png, encode_gray_png, encode_image_png, encode_mask_png};
use dcau_core::experiment::{pixel_uncertainty, ExperimentError, SubmitOutcome};
use dcau_core::learner::{self, LearnerState};
use dcau_core::pool::PoolError;
use dcau_core::{CycleRecord, Dataset, ExperimentConfig, Mask, SampleId, Session};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("cannot create state directory {0}: {1}")]
    StateDir(PathBuf, std::io::Error),
}

/// JSON error body with a machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_sample", format!("unknown sample id {id}"))
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_mask", message)
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        let (status, code) = match &e {
            ExperimentError::UnknownSample(_) | ExperimentError::Pool(PoolError::UnknownId(_)) => {
                (StatusCode::NOT_FOUND, "unknown_sample")
            }
            ExperimentError::Pool(PoolError::DoubleLabeling(_)) => (StatusCode::CONFLICT, "double_labeling"),
            ExperimentError::Pool(PoolError::NotPending(_)) => (StatusCode::CONFLICT, "not_pending"),
            ExperimentError::Pool(PoolError::BudgetExhausted { .. }) => (StatusCode::CONFLICT, "budget_exhausted"),
            ExperimentError::PendingLabels(_) => (StatusCode::CONFLICT, "pending_labels"),
            ExperimentError::InvalidMask { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "malformed_mask"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, msg)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub total: usize,
    pub consumed: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub cycle: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub pending: usize,
    pub budget: Budget,
    pub busy: bool,
    pub finished: bool,
    pub strategy: Strategy,
    pub per_cycle_k: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub color_map: Vec<[u8; 3]>,
    pub completed_cycles: usize,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub sample_id: SampleId,
    pub score: Option<f64>,
    pub status: ItemStatus,
    pub image: String,
    pub prediction: String,
    pub uncertainty: String,
}

impl QueueItem {
    fn new(id: &SampleId, score: Option<f64>, status: ItemStatus) -> Self {
        QueueItem {
            sample_id: id.clone(),
            score,
            status,
            image: format!("/sample/{id}/image"),
            prediction: format!("/sample/{id}/prediction"),
            uncertainty: format!("/sample/{id}/uncertainty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub records: Vec<CycleRecord>,
    /// Record of the cycle currently waiting on labels.
    pub open_cycle: Option<CycleRecord>,
    pub class_names: Vec<String>,
}

/// Immutable view of the session published after every transition.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub status: Status,
    pub queue: Vec<QueueItem>,
    pub metrics: Metrics,
    dataset: Arc<Dataset>,
    learner: Arc<LearnerState>,
    weights: Option<WeightVector>,
    form: UncertaintyForm,
}

impl Snapshot {
    fn capture(session: &Session, busy: bool, last_error: Option<String>) -> Self {
        let pool = session.pool();
        let ds = session.dataset();
        let cfg = session.config();
        let scores = session.open_cycle().map(|o| &o.scores);
        let mut queue: Vec<QueueItem> = pool
            .pending
            .iter()
            .map(|id| QueueItem::new(id, scores.and_then(|s| s.get(id)).copied(), ItemStatus::Pending))
            .collect();
        queue.sort_by(|a, b| {
            b.score
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&a.score.unwrap_or(f64::NEG_INFINITY))
                .then_with(|| a.sample_id.cmp(&b.sample_id))
        });
        Snapshot {
            status: Status {
                cycle: pool.cycle,
                labeled: pool.labeled_ids.len(),
                unlabeled: pool.unlabeled_ids.len(),
                pending: pool.pending.len(),
                budget: Budget {
                    total: pool.total_budget,
                    consumed: pool.consumed,
                    remaining: pool.remaining_budget(),
                },
                busy,
                finished: session.is_finished(),
                strategy: cfg.strategy,
                per_cycle_k: cfg.per_cycle_k,
                num_classes: ds.num_classes(),
                class_names: ds.class_names().to_vec(),
                color_map: ds.color_map().to_vec(),
                completed_cycles: session.records().len(),
                last_error,
            },
            queue,
            metrics: Metrics {
                records: session.records().to_vec(),
                open_cycle: session.open_cycle().map(|o| o.record.clone()),
                class_names: ds.class_names().to_vec(),
            },
            dataset: Arc::clone(ds),
            learner: Arc::new(session.learner().clone()),
            weights: session.current_weights(),
            form: cfg.uncertainty_form,
        }
    }

    fn image_png(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let sample = self.dataset.get(&SampleId::new(id)).ok_or_else(|| ApiError::unknown(id))?;
        encode_image_png(&sample.image).map_err(internal)
    }

    fn prediction_png(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let sample = self.dataset.get(&SampleId::new(id)).ok_or_else(|| ApiError::unknown(id))?;
        let pm = learner::predict_proba(&self.learner, &sample.image).map_err(internal)?;
        encode_mask_png(&pm.argmax()).map_err(internal)
    }

    fn uncertainty_png(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        let sample = self.dataset.get(&SampleId::new(id)).ok_or_else(|| ApiError::unknown(id))?;
        let map = pixel_uncertainty(
            &self.learner,
            &sample.image,
            self.status.strategy,
            self.weights.as_ref(),
            self.form,
        )
        .map_err(internal)?;
        let scale = (self.status.num_classes.max(2) as f64).ln();
        let gray = map
            .iter()
            .map(|v| ((v / scale).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        encode_gray_png(sample.image.width(), sample.image.height(), gray).map_err(internal)
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReply {
    pub item: QueueItem,
    pub remaining: usize,
    pub cycle_completed: bool,
}

enum Command {
    Submit {
        mask: Mask,
        reply: oneshot::Sender<Result<LabelReply, ApiError>>,
    },
    Advance {
        reply: oneshot::Sender<Result<(), ApiError>>,
    },
}

#[derive(Clone)]
struct AppState {
    snapshot: watch::Receiver<Arc<Snapshot>>,
    commands: mpsc::Sender<Command>,
}

impl AppState {
    fn current(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.borrow())
    }
}

struct Writer {
    session: Session,
    state_dir: PathBuf,
    publish: watch::Sender<Arc<Snapshot>>,
    last_error: Option<String>,
}

impl Writer {
    fn publish(&self, busy: bool) {
        let snap = Snapshot::capture(&self.session, busy, self.last_error.clone());
        self.publish.send_replace(Arc::new(snap));
    }

    fn checkpoint(&mut self) -> Result<(), ApiError> {
        self.session.save_checkpoint(&self.state_dir).map_err(|e| {
            log::error!("checkpoint failed: {e}");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "checkpoint_failed", e.to_string())
        })
    }

    fn submit(&mut self, mask: Mask) -> Result<LabelReply, ApiError> {
        let id = mask.id().clone();
        let outcome = self.session.submit_label(mask)?;
        self.checkpoint()?;
        let (remaining, cycle_completed) = match outcome {
            SubmitOutcome::Accepted { remaining } => (remaining, false),
            SubmitOutcome::CycleCompleted { .. } => (0, true),
        };
        Ok(LabelReply {
            item: QueueItem::new(&id, None, ItemStatus::Submitted),
            remaining,
            cycle_completed,
        })
    }

    fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Submit { mask, reply } => {
                    let result = self.submit(mask);
                    self.publish(false);
                    let _ = reply.send(result);
                }
                Command::Advance { reply } => {
                    let pending = self.session.pool().pending.len();
                    if pending > 0 {
                        let _ = reply.send(Err(ExperimentError::PendingLabels(pending).into()));
                        continue;
                    }
                    if self.session.is_finished() {
                        let _ = reply.send(Err(ApiError::new(
                            StatusCode::CONFLICT,
                            "finished",
                            "annotation budget or cycle count exhausted",
                        )));
                        continue;
                    }
                    self.publish(true);
                    let _ = reply.send(Ok(()));
                    self.last_error = match self.session.begin_cycle() {
                        Ok(_) => self.checkpoint().err().map(|e| e.message),
                        Err(e) => {
                            log::error!("cycle advance failed: {e}");
                            Some(e.to_string())
                        }
                    };
                    self.publish(false);
                }
            }
        }
        log::debug!("writer stopped");
    }
}

/// A running session: the writer thread plus a handle for building routers.
pub struct Service {
    state: AppState,
    writer: JoinHandle<()>,
}

impl Service {
    /// Resumes from `state_dir` if it holds a checkpoint, otherwise starts a
    /// new human-mode session from `config` and checkpoints it immediately.
    pub fn open(dataset: Arc<Dataset>, config: ExperimentConfig, state_dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(state_dir).map_err(|e| ServiceError::StateDir(state_dir.to_path_buf(), e))?;
        let session = if Session::has_checkpoint(state_dir) {
            let s = Session::load_checkpoint(dataset, state_dir)?;
            log::info!("resumed session at cycle {} from {}", s.pool().cycle, state_dir.display());
            s
        } else {
            let config = ExperimentConfig {
                annotation_mode: AnnotationMode::Human,
                ..config
            };
            let s = Session::new(dataset, config)?;
            s.save_checkpoint(state_dir)?;
            s
        };
        let (publish, snapshot) = watch::channel(Arc::new(Snapshot::capture(&session, false, None)));
        let (commands, rx) = mpsc::channel(64);
        let writer = Writer {
            session,
            state_dir: state_dir.to_path_buf(),
            publish,
            last_error: None,
        };
        let writer = std::thread::Builder::new()
            .name("session-writer".into())
            .spawn(move || writer.run(rx))
            .expect("spawn writer thread");
        Ok(Service {
            state: AppState { snapshot, commands },
            writer,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.current()
    }

    /// Router for the API; `assets` is an optional static directory served
    /// for every path the API does not claim.
    pub fn router(&self, assets: Option<&Path>) -> Router {
        let api = Router::new()
            .route("/status", get(status))
            .route("/queue", get(queue))
            .route("/metrics", get(metrics))
            .route("/sample/{id}/{kind}", get(sample))
            .route("/labels", post(labels))
            .route("/cycle/advance", post(advance))
            .with_state(self.state.clone());
        match assets {
            Some(dir) => api.fallback_service(ServeDir::new(dir)),
            None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") }),
        }
    }

    /// Stops the writer once every router built from this service is gone.
    pub fn shutdown(self) {
        drop(self.state);
        let _ = self.writer.join();
    }
}

async fn status(State(st): State<AppState>) -> Json<Status> {
    Json(st.current().status.clone())
}

async fn queue(State(st): State<AppState>) -> Json<Vec<QueueItem>> {
    Json(st.current().queue.clone())
}

async fn metrics(State(st): State<AppState>) -> Json<Metrics> {
    Json(st.current().metrics.clone())
}

async fn sample(State(st): State<AppState>, UrlPath((id, kind)): UrlPath<(String, String)>) -> Result<Response, ApiError> {
    let snap = st.current();
    let png = tokio::task::spawn_blocking(move || match kind.as_str() {
        "image" => snap.image_png(&id),
        "prediction" => snap.prediction_png(&id),
        "uncertainty" => snap.uncertainty_png(&id),
        other => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown payload {other}"))),
    })
    .await
    .map_err(internal)??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    pub id: String,
    /// Base64-encoded single-channel PNG, pixel value = class index.
    pub mask: String,
}

async fn labels(State(st): State<AppState>, body: Result<Json<LabelRequest>, JsonRejection>) -> Result<Json<LabelReply>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_request", e.body_text()))?;
    let id = SampleId::new(req.id);
    if st.current().dataset.get(&id).is_none() {
        return Err(ApiError::unknown(id.as_str()));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(req.mask.trim())
        .map_err(|e| ApiError::malformed(format!("mask is not base64: {e}")))?;
    let mask = decode_mask_png(id, &bytes).map_err(|e| ApiError::malformed(e.to_string()))?;
    let (reply, rx) = oneshot::channel();
    st.commands
        .send(Command::Submit { mask, reply })
        .await
        .map_err(internal)?;
    rx.await.map_err(internal)?.map(Json)
}

async fn advance(State(st): State<AppState>) -> Result<Response, ApiError> {
    if st.current().status.busy {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", "a cycle is already being computed"));
    }
    let (reply, rx) = oneshot::channel();
    st.commands.send(Command::Advance { reply }).await.map_err(internal)?;
    rx.await.map_err(internal)??;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "started": true }))).into_response())
}

/// Serves `router` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
