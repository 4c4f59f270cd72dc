//! HTTP/JSON service that connects a training run to people: a pending
//! annotation slot the trainer blocks on, human-listener evaluation
//! episodes, per-word importance, and run metrics.

pub mod slot;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use emcomm_core::envs::{Observation, RefGame, Scene};
use emcomm_core::keywords::word_importance;
use emcomm_core::listener::ListenerModel;
use emcomm_core::speaker::{DecodeMode, SpeakerModel};
use emcomm_core::training::{MetricsRow, RunManifest};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

pub use slot::{HumanProvider, PendingSlot, SlotError, SlotState};

/// Model parameters the endpoints read; replaced wholesale by the trainer.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub speaker: SpeakerModel,
    pub listener: ListenerModel,
}

#[derive(Debug, Clone)]
struct Episode {
    scenes: [Scene; 2],
    target_position: usize,
    message: Vec<usize>,
    listener_obs: Observation,
    snapshot: Arc<Snapshot>,
    choice: Option<usize>,
}

#[derive(Debug, Default)]
struct EpisodeBook {
    next_id: u64,
    episodes: BTreeMap<u64, Episode>,
    answered: usize,
    correct: usize,
}

/// Everything the handlers share.
#[derive(Debug)]
pub struct AppState {
    pub slot: Arc<PendingSlot>,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    test_scenes: Vec<Scene>,
    book: Mutex<EpisodeBook>,
    rng: Mutex<ChaCha8Rng>,
    metrics: RwLock<Option<MetricsRow>>,
    manifest: RwLock<Option<RunManifest>>,
    human_eval_log: Option<PathBuf>,
}

impl AppState {
    /// `test_scenes` feed human-listener episodes; `human_eval_log` receives
    /// one JSON line per answered episode.
    pub fn new(test_scenes: Vec<Scene>, human_eval_log: Option<PathBuf>, seed: u64) -> Self {
        Self {
            slot: Arc::new(PendingSlot::new()),
            snapshot: RwLock::new(None),
            test_scenes,
            book: Mutex::new(EpisodeBook::default()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            metrics: RwLock::new(None),
            manifest: RwLock::new(None),
            human_eval_log,
        }
    }

    pub fn set_snapshot(&self, speaker: SpeakerModel, listener: ListenerModel) {
        *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(Snapshot { speaker, listener }));
    }

    pub fn set_metrics(&self, row: MetricsRow) {
        *self.metrics.write().expect("metrics lock") = Some(row);
    }

    pub fn set_manifest(&self, manifest: RunManifest) {
        *self.manifest.write().expect("manifest lock") = Some(manifest);
    }

    fn snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot
            .read()
            .expect("snapshot lock")
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model snapshot yet"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<SlotError> for ApiError {
    fn from(e: SlotError) -> Self {
        let status = match e {
            SlotError::NotFound => StatusCode::NOT_FOUND,
            SlotError::AlreadyAnswered => StatusCode::CONFLICT,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<emcomm_core::Error> for ApiError {
    fn from(e: emcomm_core::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// `GET /api/v1/pending` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub request_id: u64,
    pub round: usize,
    /// Referential game only: the speaker's two scenes and which is the target.
    pub scenes: Option<[Scene; 2]>,
    pub target: Option<usize>,
    pub observation: Observation,
    pub sampled_message: Vec<String>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateBody {
    pub request_id: u64,
    pub utterance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReply {
    pub accepted_tokens: Vec<String>,
    pub dropped_tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeState {
    Open,
    Answered,
}

/// `GET /api/v1/episode` body. Never reveals the target while open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEpisodeView {
    pub episode_id: u64,
    /// In listener presentation order.
    pub scenes: [Scene; 2],
    pub message: Vec<String>,
    pub state: EpisodeState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceBody {
    pub choice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceReply {
    pub correct: bool,
    pub running_success_rate: f64,
}

/// One line of `human_eval.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalRecord {
    pub episode_id: u64,
    pub scenes: [Scene; 2],
    pub message: Vec<String>,
    pub choice: usize,
    pub target_position: usize,
    pub correct: bool,
    pub running_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub latest: Option<MetricsRow>,
    pub manifest: Option<RunManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordView {
    pub token: String,
    pub position: usize,
    pub mi_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceView {
    pub episode_id: u64,
    pub words: Vec<WordView>,
}

async fn get_pending(State(state): State<Arc<AppState>>) -> Response {
    match state.slot.pending() {
        None => StatusCode::NO_CONTENT.into_response(),
        Some(r) => {
            let (scenes, target) = match &r.observation {
                Observation::RefSpeaker { scenes, target } => (Some(scenes.clone()), Some(*target)),
                _ => (None, None),
            };
            Json(PendingView {
                request_id: r.request_id,
                round: r.round,
                scenes,
                target,
                observation: r.observation,
                sampled_message: r.sampled_message,
                entropy: r.entropy,
            })
            .into_response()
        }
    }
}

async fn post_annotate(
    State(state): State<Arc<AppState>>,
    Json(body): Json<AnnotateBody>,
) -> Result<Json<AnnotateReply>, ApiError> {
    state.slot.check(body.request_id)?;
    let snap = state.snapshot()?;
    let vocab = &snap.speaker.vocab;
    let (mut ids, dropped) = vocab.filter_text(&body.utterance);
    ids.truncate(snap.speaker.cfg.l_max);
    if ids.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "utterance has no known words",
        ));
    }
    let accepted = vocab.decode(&ids);
    state.slot.answer(body.request_id, accepted.clone())?;
    Ok(Json(AnnotateReply {
        accepted_tokens: accepted,
        dropped_tokens: dropped,
    }))
}

async fn get_episode(State(state): State<Arc<AppState>>) -> Result<Json<HumanEpisodeView>, ApiError> {
    let snap = state.snapshot()?;
    if state.test_scenes.len() < 2 {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no referential test set"));
    }
    let game = RefGame::new(state.test_scenes.clone())?;
    let (game_state, message) = {
        let mut rng = state.rng.lock().expect("rng lock");
        let target = state.test_scenes.choose(&mut *rng).expect("non-empty").clone();
        let distractor = game.sample_distractor(&target, &mut *rng);
        let (s, _) = RefGame::reset_with(target, distractor, &mut *rng);
        let ctx = snap.speaker.embed_observation(&[s.speaker_observation()])?;
        let msg = snap.speaker.sample_message(&ctx, &mut *rng, DecodeMode::Greedy);
        (s, msg.tokens)
    };
    let listener_obs = game_state.listener_observation();
    let Observation::RefListener { candidates } = &listener_obs else {
        unreachable!("referential listener observation")
    };
    let episode = Episode {
        scenes: candidates.clone(),
        target_position: game_state.target_position(),
        message,
        listener_obs: listener_obs.clone(),
        snapshot: Arc::clone(&snap),
        choice: None,
    };
    let view = HumanEpisodeView {
        episode_id: 0,
        scenes: episode.scenes.clone(),
        message: snap.speaker.vocab.decode(&episode.message),
        state: EpisodeState::Open,
    };
    let mut book = state.book.lock().expect("book lock");
    let id = book.next_id;
    book.next_id += 1;
    book.episodes.insert(id, episode);
    Ok(Json(HumanEpisodeView { episode_id: id, ..view }))
}

async fn post_choice(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(body): Json<ChoiceBody>,
) -> Result<Json<ChoiceReply>, ApiError> {
    if body.choice > 1 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "choice must be 0 or 1"));
    }
    let mut book = state.book.lock().expect("book lock");
    let episode = book
        .episodes
        .get_mut(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown episode"))?;
    if episode.choice.is_some() {
        return Err(ApiError::new(StatusCode::CONFLICT, "episode already answered"));
    }
    episode.choice = Some(body.choice);
    let correct = body.choice == episode.target_position;
    let record_base = (
        episode.scenes.clone(),
        episode.snapshot.speaker.vocab.decode(&episode.message),
        episode.target_position,
    );
    book.answered += 1;
    book.correct += usize::from(correct);
    let rate = book.correct as f64 / book.answered as f64;
    if let Some(path) = &state.human_eval_log {
        let (scenes, message, target_position) = record_base;
        let record = HumanEvalRecord {
            episode_id: id,
            scenes,
            message,
            choice: body.choice,
            target_position,
            correct,
            running_success_rate: rate,
        };
        let line = serde_json::to_string(&record).map_err(emcomm_core::Error::from)?;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"))
            .map_err(emcomm_core::Error::from)?;
    }
    Ok(Json(ChoiceReply {
        correct,
        running_success_rate: rate,
    }))
}

async fn get_metrics(State(state): State<Arc<AppState>>) -> Json<MetricsView> {
    Json(MetricsView {
        latest: state.metrics.read().expect("metrics lock").clone(),
        manifest: state.manifest.read().expect("manifest lock").clone(),
    })
}

async fn get_importance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Json<ImportanceView>, ApiError> {
    let episode = state
        .book
        .lock()
        .expect("book lock")
        .episodes
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown episode"))?;
    let listener = &episode.snapshot.listener;
    let view = listener.view_of(&episode.listener_obs)?;
    let msg = emcomm_core::speaker::Message::from_tokens(episode.message.clone());
    let imp = word_importance(listener, &view, &msg)?;
    let vocab = &episode.snapshot.speaker.vocab;
    Ok(Json(ImportanceView {
        episode_id: id,
        words: imp
            .words
            .iter()
            .map(|w| WordView {
                token: vocab.token(w.token).to_string(),
                position: w.position,
                mi_nats: w.mi_nats,
            })
            .collect(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/v1/pending", get(get_pending))
        .route("/api/v1/annotate", post(post_annotate))
        .route("/api/v1/episode", get(get_episode))
        .route("/api/v1/episode/{id}/choice", post(post_choice))
        .route("/api/v1/metrics", get(get_metrics))
        .route("/api/v1/importance/{id}", get(get_importance))
        .layer(cors)
        .with_state(state)
}

/// Serves the API on an already-bound listener until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
