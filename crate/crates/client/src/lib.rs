//! Async HTTP clients for the victim, embedding and pipeline endpoints,
//! plus blocking adapters that plug them into the synchronous pipeline.
//!
//! Every client retries transport failures (connection errors, timeouts,
//! 429 and 502-504) with exponential backoff and caps in-flight requests
//! with a semaphore. Prompts are sent byte-for-byte as given.

use std::sync::Arc;
use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::runtime::Handle;
use tokio::sync::Semaphore;

use mia_core::embed::{EmbedError, Embedder, Embedding};
use mia_core::metrics::EvalReport;
use mia_core::protocol::*;
use mia_core::victim::{CompletionRecord, RecordMode, Victim, VictimError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{url} unreachable after {attempts} attempts: {message}")]
    Transport { url: String, attempts: u32, message: String },
    #[error("{url} answered {status}: {message}")]
    Status { url: String, status: u16, kind: Option<String>, message: String },
    #[error("{url} sent an unreadable body: {message}")]
    Protocol { url: String, message: String },
}

impl ClientError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(200) }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub concurrency_limit: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    /// Sent as `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { concurrency_limit: 8, retry: RetryPolicy::default(), timeout: Duration::from_secs(120), bearer_token: None }
    }
}

#[derive(Debug, Clone)]
struct Http {
    client: reqwest::Client,
    base: String,
    options: ClientOptions,
    permits: Arc<Semaphore>,
}

fn retryable(status: StatusCode) -> bool {
    matches!(status.as_u16(), 429 | 502 | 503 | 504)
}

impl Http {
    fn new(base: &str, options: ClientOptions) -> Self {
        let client = reqwest::Client::builder().timeout(options.timeout).build().expect("http client builds");
        let permits = Arc::new(Semaphore::new(options.concurrency_limit.max(1)));
        Self { client, base: base.trim_end_matches('/').to_string(), options, permits }
    }

    async fn send<Q: Serialize + ?Sized, R: DeserializeOwned>(&self, path: &str, body: Option<&Q>) -> Result<R, ClientError> {
        let url = format!("{}{path}", self.base);
        let _permit = self.permits.acquire().await.expect("semaphore never closes");
        let policy = self.options.retry;
        let mut last = String::new();
        for attempt in 1..=policy.attempts.max(1) {
            if attempt > 1 {
                tokio::time::sleep(policy.base_delay * 2u32.pow(attempt - 2)).await;
            }
            let mut req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            if let Some(token) = &self.options.bearer_token {
                req = req.bearer_auth(token);
            }
            let resp = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    tracing::debug!(%url, attempt, error = %e, "request failed");
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text().await {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if retryable(status) {
                tracing::debug!(%url, attempt, %status, "retryable status");
                last = format!("status {status}: {text}");
                continue;
            }
            if !status.is_success() {
                let (kind, message) = match serde_json::from_str::<ErrorBody>(&text) {
                    Ok(b) => (Some(b.kind), b.error),
                    Err(_) => (None, text),
                };
                return Err(ClientError::Status { url, status: status.as_u16(), kind, message });
            }
            return serde_json::from_str(&text).map_err(|e| ClientError::Protocol { url, message: e.to_string() });
        }
        Err(ClientError::Transport { url, attempts: policy.attempts.max(1), message: last })
    }

    async fn post<Q: Serialize + ?Sized, R: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<R, ClientError> {
        self.send(path, Some(body)).await
    }

    async fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R, ClientError> {
        self.send::<(), R>(path, None).await
    }
}

/// Client for a remote completion model speaking `/complete` and `/score`.
#[derive(Debug, Clone)]
pub struct VictimClient {
    http: Http,
    temperature: f64,
}

fn victim_error(e: ClientError, capability: &'static str) -> VictimError {
    match e {
        ClientError::Transport { attempts, message, .. } => VictimError::Transport { attempts, message },
        ClientError::Status { status: 404 | 501, .. } => VictimError::Unsupported(capability),
        ClientError::Status { message, .. } => VictimError::Rejected(message),
        ClientError::Protocol { message, .. } => VictimError::Protocol { field: message },
    }
}

impl VictimClient {
    pub fn new(base_url: &str, options: ClientOptions) -> Self {
        Self { http: Http::new(base_url, options), temperature: 0.0 }
    }

    pub async fn complete(&self, prompt: &str, prompt_id: &str, max_tokens: usize) -> Result<CompletionRecord, VictimError> {
        if prompt.trim().is_empty() {
            return Err(VictimError::EmptyPrompt);
        }
        let req = CompleteRequest { prompt: prompt.to_string(), max_tokens, temperature: self.temperature, prompt_id: Some(prompt_id.to_string()) };
        let resp: CompleteResponse = self.http.post("/complete", &req).await.map_err(|e| victim_error(e, "completion"))?;
        let record = CompletionRecord {
            prompt_id: prompt_id.to_string(),
            text: resp.text,
            tokens: resp.tokens,
            token_logprobs: resp.token_logprobs,
            mode: RecordMode::Completion,
        };
        record.validate()?;
        Ok(record)
    }

    pub async fn score(&self, text: &str) -> Result<Vec<f64>, VictimError> {
        if text.trim().is_empty() {
            return Err(VictimError::EmptyPrompt);
        }
        let resp: ScoreResponse = self.http.post("/score", &ScoreRequest { text: text.to_string() }).await.map_err(|e| victim_error(e, "scoring"))?;
        if resp.token_logprobs.is_empty() || resp.token_logprobs.iter().any(|v| !(v.is_finite() && *v <= 0.0)) {
            return Err(VictimError::Protocol { field: "token_logprobs".into() });
        }
        Ok(resp.token_logprobs)
    }

    /// Completes many (prompt, prompt_id) pairs concurrently, within the
    /// client's in-flight limit. Output order follows input order.
    pub async fn complete_many(&self, prompts: &[(String, String)], max_tokens: usize) -> Result<Vec<CompletionRecord>, VictimError> {
        futures::future::try_join_all(prompts.iter().map(|(p, id)| self.complete(p, id, max_tokens))).await
    }
}

/// Client for a remote `/embed` service returning 768-dimensional vectors.
#[derive(Debug, Clone)]
pub struct EmbedClient {
    http: Http,
}

impl EmbedClient {
    pub fn new(base_url: &str, options: ClientOptions) -> Self {
        Self { http: Http::new(base_url, options) }
    }

    pub async fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let resp: EmbedResponse = self.http.post("/embed", &EmbedRequest { text: text.to_string() }).await.map_err(|e| match e {
            ClientError::Transport { attempts, message, .. } => EmbedError::Transport { attempts, message },
            other => EmbedError::Protocol(other.to_string()),
        })?;
        Embedding::new(resp.embedding)
    }
}

/// Client for the pipeline operations of `mia-server`.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    http: Http,
}

impl ServiceClient {
    pub fn new(base_url: &str, options: ClientOptions) -> Self {
        Self { http: Http::new(base_url, options) }
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.http.get("/health").await
    }

    pub async fn perturb(&self, req: &PerturbRequest) -> Result<PerturbResponse, ClientError> {
        self.http.post("/v1/perturb", req).await
    }

    pub async fn features(&self, req: &FeaturesRequest) -> Result<FeaturesResponse, ClientError> {
        self.http.post("/v1/features", req).await
    }

    pub async fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ClientError> {
        self.http.post("/v1/predict", req).await
    }

    pub async fn evaluate(&self, req: &EvaluateRequest) -> Result<EvalReport, ClientError> {
        self.http.post("/v1/evaluate", req).await
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<SimulateResponse, ClientError> {
        self.http.post("/v1/simulate", req).await
    }
}

/// [`Victim`] over a [`VictimClient`], for use from threads outside the
/// runtime that `handle` belongs to.
pub struct BlockingVictim {
    client: VictimClient,
    handle: Handle,
}

impl BlockingVictim {
    pub fn new(client: VictimClient, handle: Handle) -> Self {
        Self { client, handle }
    }
}

impl Victim for BlockingVictim {
    fn complete(&self, prompt: &str, prompt_id: &str, max_tokens: usize) -> Result<CompletionRecord, VictimError> {
        self.handle.block_on(self.client.complete(prompt, prompt_id, max_tokens))
    }

    fn score(&self, text: &str) -> Result<Vec<f64>, VictimError> {
        self.handle.block_on(self.client.score(text))
    }
}

/// [`Embedder`] over an [`EmbedClient`]; same threading rule as [`BlockingVictim`].
pub struct BlockingEmbedder {
    client: EmbedClient,
    handle: Handle,
}

impl BlockingEmbedder {
    pub fn new(client: EmbedClient, handle: Handle) -> Self {
        Self { client, handle }
    }
}

impl Embedder for BlockingEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.handle.block_on(self.client.embed(text))
    }
}
