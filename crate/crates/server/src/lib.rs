//! HTTP service: the simulated victim's completion and scoring endpoints,
//! the hash embedder, and the pure pipeline operations. Wire types live in
//! [`mia_core::protocol`].

use std::sync::Arc;

use axum::extract::{rejection::JsonRejection, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use mia_core::artifact::TOOL_VERSION;
use mia_core::codeast::split_pieces;
use mia_core::corpus::{Corpus, Origin};
use mia_core::embed::{EmbedError, Embedder, HashEmbedder};
use mia_core::features::build_features;
use mia_core::metrics;
use mia_core::mlpcls;
use mia_core::perturb::generate_variants;
use mia_core::pipeline::{self, PipelineError, SimulateOptions};
use mia_core::protocol::*;
use mia_core::victim::{SimVictim, SimVictimConfig, Victim, VictimError};

#[derive(Clone)]
pub struct AppState {
    victim: Option<Arc<dyn Victim>>,
    embedder: Arc<HashEmbedder>,
}

impl AppState {
    /// A service without a victim; `/complete` and `/score` answer 503.
    pub fn new(embed_seed: u64) -> Self {
        Self { victim: None, embedder: Arc::new(HashEmbedder::new(embed_seed)) }
    }

    pub fn with_victim(mut self, victim: Arc<dyn Victim>) -> Self {
        self.victim = Some(victim);
        self
    }

    /// Serves a simulator over `corpus`. Without an explicit memorized set,
    /// the train-pool samples are memorized.
    pub fn with_simulator(self, mut config: SimVictimConfig, corpus: &Corpus) -> Result<Self, VictimError> {
        if config.memorized_ids.is_empty() {
            config.memorized_ids = corpus.ids_with_origin(Origin::TrainPool).into_iter().map(String::from).collect();
        }
        let sim = SimVictim::new(config, corpus)?;
        Ok(self.with_victim(Arc::new(sim)))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/complete", post(complete))
        .route("/score", post(score))
        .route("/embed", post(embed))
        .route("/v1/perturb", post(perturb))
        .route("/v1/features", post(features))
        .route("/v1/predict", post(predict))
        .route("/v1/evaluate", post(evaluate))
        .route("/v1/simulate", post(simulate))
        .with_state(state)
}

/// Serves the router on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn validation(message: impl ToString) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, kind: "validation", message: message.to_string() }
    }

    fn unavailable(message: impl ToString) -> Self {
        Self { status: StatusCode::SERVICE_UNAVAILABLE, kind: "unavailable", message: message.to_string() }
    }

    fn internal(message: impl ToString) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: message.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.message, kind: self.kind.to_string() };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "validation", message: r.body_text() }
    }
}

impl From<VictimError> for ApiError {
    fn from(e: VictimError) -> Self {
        match e {
            VictimError::Unsupported(_) => Self { status: StatusCode::NOT_IMPLEMENTED, kind: "unsupported", message: e.to_string() },
            VictimError::Transport { .. } => Self::unavailable(e),
            _ => Self::validation(e),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Validation(_) => Self::validation(e),
            PipelineError::Transport(_) => Self::unavailable(e),
            _ => Self::internal(e),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn victim(state: &AppState) -> Result<Arc<dyn Victim>, ApiError> {
    state.victim.clone().ok_or_else(|| ApiError::unavailable("no victim model is loaded"))
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), version: TOOL_VERSION.into(), victim: state.victim.is_some() })
}

async fn complete(State(state): State<AppState>, body: Result<Json<CompleteRequest>, JsonRejection>) -> ApiResult<CompleteResponse> {
    let Json(req) = body?;
    if req.max_tokens == 0 {
        return Err(ApiError::validation("max_tokens must be positive"));
    }
    let v = victim(&state)?;
    let record = blocking(move || {
        let id = req.prompt_id.as_deref().unwrap_or("");
        Ok(v.complete(&req.prompt, id, req.max_tokens)?)
    })
    .await?;
    Ok(Json(CompleteResponse { text: record.text, tokens: record.tokens, token_logprobs: record.token_logprobs }))
}

async fn score(State(state): State<AppState>, body: Result<Json<ScoreRequest>, JsonRejection>) -> ApiResult<ScoreResponse> {
    let Json(req) = body?;
    let v = victim(&state)?;
    blocking(move || {
        let token_logprobs = v.score(&req.text)?;
        let tokens = split_pieces(&req.text).into_iter().take(token_logprobs.len()).collect();
        Ok(Json(ScoreResponse { tokens, token_logprobs }))
    })
    .await
}

async fn embed(State(state): State<AppState>, body: Result<Json<EmbedRequest>, JsonRejection>) -> ApiResult<EmbedResponse> {
    let Json(req) = body?;
    let e = state.embedder.clone();
    blocking(move || match e.embed(&req.text) {
        Ok(v) => Ok(Json(EmbedResponse { embedding: v.into_inner() })),
        Err(err @ EmbedError::EmptyInput) => Err(ApiError::validation(err)),
        Err(err) => Err(ApiError::internal(err)),
    })
    .await
}

async fn perturb(body: Result<Json<PerturbRequest>, JsonRejection>) -> ApiResult<PerturbResponse> {
    let Json(req) = body?;
    blocking(move || Ok(Json(PerturbResponse { variants: generate_variants(&req.sample, req.seed) }))).await
}

async fn features(body: Result<Json<FeaturesRequest>, JsonRejection>) -> ApiResult<FeaturesResponse> {
    let Json(req) = body?;
    blocking(move || {
        let embedder = HashEmbedder::new(req.seed);
        let fv = build_features(&req.y, &req.base, &req.perturbed, &embedder).map_err(ApiError::validation)?;
        let features = fv.masked(&req.mask).map_err(ApiError::validation)?;
        Ok(Json(FeaturesResponse { features, degenerate_variants: fv.degenerate_variants }))
    })
    .await
}

async fn predict(body: Result<Json<PredictRequest>, JsonRejection>) -> ApiResult<PredictResponse> {
    let Json(req) = body?;
    blocking(move || {
        req.model.validate().map_err(ApiError::validation)?;
        let predictions = req
            .features
            .iter()
            .map(|x| mlpcls::predict(&req.model, x))
            .collect::<Result<_, _>>()
            .map_err(ApiError::validation)?;
        Ok(Json(PredictResponse { predictions }))
    })
    .await
}

async fn evaluate(body: Result<Json<EvaluateRequest>, JsonRejection>) -> ApiResult<metrics::EvalReport> {
    let Json(req) = body?;
    Ok(Json(metrics::evaluate(&req.predictions).map_err(ApiError::validation)?))
}

async fn simulate(body: Result<Json<SimulateRequest>, JsonRejection>) -> ApiResult<SimulateResponse> {
    let Json(req) = body?;
    blocking(move || {
        let embedder = pipeline_embedder(&req.config)?;
        let options = SimulateOptions { n_members: req.n_members, n_nonmembers: req.n_nonmembers, memorize_all: req.memorize_all };
        let run = pipeline::simulate(&req.config, options, &embedder)?;
        let files = run.files().into_iter().map(|(name, body)| (name.to_string(), body)).collect();
        Ok(Json(SimulateResponse { files }))
    })
    .await
}

fn pipeline_embedder(config: &mia_core::config::PipelineConfig) -> Result<HashEmbedder, ApiError> {
    mia_core::stage::local_embedder(config).ok_or_else(|| ApiError::validation("the service simulates with the hash embedder only"))
}

