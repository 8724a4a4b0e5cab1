//! HTTP/JSON service over the story engine. Sessions persist as JSON
//! documents; mutating requests on one session are serialized, and a
//! request that finds the session busy gets 409.

pub mod config;
pub mod error;
pub mod store;

use std::collections::hash_map::RandomState;
use std::hash::{BuildHasher, Hasher};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashmap::DashMap;
use improv_core::gateway::{ProviderKind, SpeechAudio};
use improv_core::story::{
    ActionOption, EndingsExercise, HintTriple, KeyPoints, Phase, StoryEngine, StoryPart, StorySession,
};
use improv_core::{Gateway, MediaIngest, PerformanceAnalysis, TemplateRegistry};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::{ApiConfig, Limits, ServerArgs};
pub use error::{ApiError, ErrorBody};
pub use store::{SessionStore, StoreError};

/// Actions offered after every step.
pub const ACTIONS_PER_STEP: usize = 2;
const MAX_BATCH: usize = 10;

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!(error = %e, "session store failure");
        ApiError::internal("session storage failed")
    }
}

type SessionLock = Arc<tokio::sync::Mutex<()>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ApiConfig,
    engine: StoryEngine,
    ingest: MediaIngest,
    store: SessionStore,
    locks: DashMap<String, SessionLock>,
    narration: DashMap<(String, usize), Arc<SpeechAudio>>,
}

impl AppState {
    /// Builds the gateway from `config.provider` and opens the store.
    pub fn new(config: ApiConfig) -> anyhow::Result<Self> {
        let gateway = Gateway::from_config(config.provider.clone())?;
        let registry = Arc::new(TemplateRegistry::builtin());
        let engine = StoryEngine::new(gateway, registry);
        Self::with_engine(config, engine)
    }

    pub fn with_engine(config: ApiConfig, engine: StoryEngine) -> anyhow::Result<Self> {
        let store = SessionStore::open(&config.data_dir)?;
        let ingest = MediaIngest::mjpeg(engine.registry().clone());
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                engine,
                ingest,
                store,
                locks: DashMap::new(),
                narration: DashMap::new(),
            }),
        })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.inner.config
    }

    pub fn engine(&self) -> &StoryEngine {
        &self.inner.engine
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    fn lock_for(&self, id: &str) -> SessionLock {
        self.inner.locks.entry(id.to_string()).or_default().clone()
    }

    /// Runs blocking engine work off the async runtime, bounded by the
    /// request timeout.
    async fn blocking<T, F>(&self, work: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(AppState) -> Result<T, ApiError> + Send + 'static,
    {
        let state = self.clone();
        let task = tokio::task::spawn_blocking(move || work(state));
        match tokio::time::timeout(self.config().limits.request_timeout, task).await {
            Err(_) => Err(ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "request_timeout",
                "the request did not finish in time",
            )),
            Ok(Err(join)) => {
                tracing::error!(error = %join, "request task failed");
                Err(ApiError::internal("the request failed unexpectedly"))
            }
            Ok(Ok(result)) => result,
        }
    }

    /// Loads the session, applies `op` and saves it, holding the session's
    /// lock throughout. A held lock means 409; the session is saved only if
    /// `op` succeeds.
    async fn mutate<T, F>(&self, id: String, op: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&AppState, &mut StorySession) -> Result<T, ApiError> + Send + 'static,
    {
        if self.store().load(&id)?.is_none() {
            return Err(ApiError::not_found(format!("session `{id}` does not exist")));
        }
        let guard = self.lock_for(&id).try_lock_owned().map_err(|_| ApiError::busy())?;
        self.blocking(move |state| {
            let _guard = guard;
            let mut session = state
                .store()
                .load(&id)?
                .ok_or_else(|| ApiError::not_found(format!("session `{id}` does not exist")))?;
            let out = op(&state, &mut session)?;
            state.store().save(&session)?;
            Ok(out)
        })
        .await
    }
}

pub fn router(state: AppState) -> Router {
    let config = state.config().clone();
    let cors = {
        let origins = if config.cors_origins.iter().any(|o| o == "*") {
            AllowOrigin::any()
        } else {
            AllowOrigin::list(config.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
        };
        CorsLayer::new()
            .allow_origin(origins)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION])
            .expose_headers([header::HeaderName::from_static("x-elapsed-ms")])
    };
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/performance", post(perform))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/conclude", post(conclude))
        .route("/sessions/{id}/narration", get(narration))
        .route("/hints", get(hints))
        .route("/exercises/endings", post(endings))
        .route("/exercises/three-things", get(three_things))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(config.limits.max_upload_bytes))
        .layer(middleware::from_fn(timing))
        .layer(cors)
        .with_state(state)
}

async fn timing(request: Request, next: Next) -> Response {
    let start = Instant::now();
    let mut response = next.run(request).await;
    let elapsed = start.elapsed().as_millis().to_string();
    if let Ok(value) = HeaderValue::from_str(&elapsed) {
        response.headers_mut().insert("x-elapsed-ms", value);
    }
    response
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let Some(token) = state.config().api_token.as_deref() else {
        return next.run(request).await;
    };
    if request.uri().path() == "/healthz" || request.method() == Method::OPTIONS {
        return next.run(request).await;
    }
    let presented = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        next.run(request).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "a valid bearer token is required").into_response()
    }
}

fn body_error(e: BytesRejection) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        too_large()
    } else {
        ApiError::validation(e.body_text())
    }
}

fn too_large() -> ApiError {
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", "the upload exceeds the size limit")
}

/// Empty bodies parse as the type's default.
fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(body_error)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(&bytes).map_err(|e| ApiError::validation(format!("invalid JSON body: {e}")))
}

fn random_seed() -> u64 {
    RandomState::new().build_hasher().finish()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub provider: ProviderKind,
    pub sessions: usize,
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        provider: state.config().provider.kind,
        sessions: state.store().len(),
    })
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub hints: Option<HintTriple>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session: StorySession,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<SessionResponse>), ApiError> {
    let request: CreateSession = parse_body(body)?;
    if let Some(hints) = &request.hints {
        hints.validate().map_err(ApiError::validation)?;
    }
    if state.store().len() >= state.config().limits.max_sessions {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "session_limit",
            "the session limit has been reached",
        ));
    }
    let seed = request.seed.unwrap_or_else(random_seed);
    let session = state
        .blocking(move |state| {
            let session = state.engine().init_session(request.hints, seed)?;
            state.store().save(&session)?;
            Ok(session)
        })
        .await?;
    Ok((StatusCode::CREATED, Json(SessionResponse { session })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionResponse>, ApiError> {
    let session = state
        .store()
        .load(&id)?
        .ok_or_else(|| ApiError::not_found(format!("session `{id}` does not exist")))?;
    Ok(Json(SessionResponse { session }))
}

/// One story step: the new part, the updated ledger and the next choices.
#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub part: StoryPart,
    pub keypoints: KeyPoints,
    pub actions: Vec<ActionOption>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<PerformanceAnalysis>,
}

fn ensure_open(session: &StorySession) -> Result<(), ApiError> {
    if session.phase == Phase::Concluded {
        return Err(ApiError::new(StatusCode::GONE, "session_concluded", "the story has already concluded"));
    }
    Ok(())
}

struct Upload {
    video: Vec<u8>,
    audio: Option<Vec<u8>>,
    ratio: Option<f64>,
}

async fn read_upload(mut multipart: Multipart) -> Result<Upload, ApiError> {
    let field_error = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large()
        } else {
            ApiError::validation(format!("bad multipart body: {}", e.body_text()))
        }
    };
    let (mut video, mut audio, mut ratio) = (None, None, None);
    while let Some(field) = multipart.next_field().await.map_err(field_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(field_error)?;
        match name.as_str() {
            "video" => video = Some(bytes.to_vec()),
            "audio" => audio = Some(bytes.to_vec()).filter(|a| !a.is_empty()),
            "ratio" => {
                let text = String::from_utf8_lossy(&bytes);
                let value: f64 = text
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::validation(format!("ratio `{text}` is not a number")))?;
                ratio = Some(value);
            }
            other => return Err(ApiError::validation(format!("unexpected form field `{other}`"))),
        }
    }
    let video = video.ok_or_else(|| ApiError::validation("the `video` field is required"))?;
    Ok(Upload { video, audio, ratio })
}

async fn perform(
    State(state): State<AppState>,
    Path(id): Path<String>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let multipart = multipart.map_err(|e| ApiError::validation(e.body_text()))?;
    let upload = read_upload(multipart).await?;
    let step = state
        .mutate(id, move |state, session| {
            ensure_open(session)?;
            let capture = state.inner.ingest.capture(upload.video, upload.audio)?;
            let analysis =
                state
                    .inner
                    .ingest
                    .analyze_performance(state.engine().gateway(), &capture, upload.ratio, None)?;
            let part = state.engine().advance_with_performance(session, &analysis)?;
            let actions = state.engine().propose_actions(session, ACTIONS_PER_STEP)?;
            Ok(StepResponse {
                part,
                keypoints: session.keypoints.clone(),
                actions,
                analysis: Some(analysis),
            })
        })
        .await?;
    Ok(Json(step))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    pub action_title: String,
}

async fn advance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let request: AdvanceRequest = parse_body(body)?;
    if request.action_title.trim().is_empty() {
        return Err(ApiError::validation("`action_title` is required"));
    }
    let step = state
        .mutate(id, move |state, session| {
            ensure_open(session)?;
            let chosen = state.engine().redeem_action(session, &request.action_title)?;
            let part = state.engine().advance_with_ai(session, &chosen)?;
            let actions = state.engine().propose_actions(session, ACTIONS_PER_STEP)?;
            Ok(StepResponse {
                part,
                keypoints: session.keypoints.clone(),
                actions,
                analysis: None,
            })
        })
        .await?;
    Ok(Json(step))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConcludeResponse {
    pub part: StoryPart,
    pub session: StorySession,
}

async fn conclude(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ConcludeResponse>, ApiError> {
    let response = state
        .mutate(id, |state, session| {
            let part = state.engine().conclude_story(session)?;
            Ok(ConcludeResponse {
                part,
                session: session.clone(),
            })
        })
        .await?;
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
pub struct NarrationQuery {
    pub part: Option<usize>,
}

async fn narration(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<NarrationQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let session = state
        .store()
        .load(&id)?
        .ok_or_else(|| ApiError::not_found(format!("session `{id}` does not exist")))?;
    let index = query.part.unwrap_or(session.parts.len() - 1);
    let key = (id, index);
    let audio = match state.inner.narration.get(&key) {
        Some(hit) => hit.clone(),
        None => {
            let audio = state
                .blocking(move |state| Ok(Arc::new(state.engine().narrate_part(&session, index)?)))
                .await?;
            state.inner.narration.insert(key, audio.clone());
            audio
        }
    };
    Ok(([(header::CONTENT_TYPE, audio.content_type.clone())], audio.bytes.clone()).into_response())
}

#[derive(Debug, Deserialize)]
pub struct CountQuery {
    pub n: Option<usize>,
}

fn batch_size(query: Result<Query<CountQuery>, QueryRejection>, default: usize) -> Result<usize, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let n = query.n.unwrap_or(default);
    if n == 0 || n > MAX_BATCH {
        return Err(ApiError::validation(format!("n must be between 1 and {MAX_BATCH}")));
    }
    Ok(n)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HintsResponse {
    pub hints: Vec<HintTriple>,
}

async fn hints(
    State(state): State<AppState>,
    query: Result<Query<CountQuery>, QueryRejection>,
) -> Result<Json<HintsResponse>, ApiError> {
    let n = batch_size(query, 3)?;
    let hints = state.blocking(move |state| Ok(state.engine().generate_hints(n)?)).await?;
    Ok(Json(HintsResponse { hints }))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndingsRequest {
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExerciseResponse {
    pub exercise: EndingsExercise,
}

async fn endings(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<ExerciseResponse>), ApiError> {
    let request: EndingsRequest = parse_body(body)?;
    let seed = request.seed.unwrap_or_else(random_seed);
    let exercise = state
        .blocking(move |state| Ok(state.engine().start_endings_exercise(seed)?))
        .await?;
    Ok((StatusCode::CREATED, Json(ExerciseResponse { exercise })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionsResponse {
    pub questions: Vec<String>,
}

async fn three_things(
    State(state): State<AppState>,
    query: Result<Query<CountQuery>, QueryRejection>,
) -> Result<Json<QuestionsResponse>, ApiError> {
    let n = batch_size(query, 3)?;
    let questions = state
        .blocking(move |state| Ok(state.engine().next_three_things_prompt(n)?))
        .await?;
    Ok(Json(QuestionsResponse { questions }))
}
