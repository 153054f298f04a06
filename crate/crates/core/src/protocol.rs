//! JSON bodies of the HTTP service, shared by server and client.
//!
//! | method | path | request | response |
//! |---|---|---|---|
//! | POST | `/complete` | [`CompleteRequest`] | [`CompleteResponse`] |
//! | POST | `/score` | [`ScoreRequest`] | [`ScoreResponse`] |
//! | POST | `/embed` | [`EmbedRequest`] | [`EmbedResponse`] |
//! | GET | `/health` | | [`Health`] |
//! | POST | `/v1/perturb` | [`PerturbRequest`] | [`PerturbResponse`] |
//! | POST | `/v1/features` | [`FeaturesRequest`] | [`FeaturesResponse`] |
//! | POST | `/v1/predict` | [`PredictRequest`] | [`PredictResponse`] |
//! | POST | `/v1/evaluate` | [`EvaluateRequest`] | [`crate::metrics::EvalReport`] |
//! | POST | `/v1/simulate` | [`SimulateRequest`] | [`SimulateResponse`] |
//!
//! Failures carry an [`ErrorBody`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::Sample;
use crate::features::FeatureMask;
use crate::metrics::Prediction;
use crate::mlpcls::{ClassProbability, MlpModel};
use crate::perturb::PerturbedVariant;
use crate::victim::CompletionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
    pub max_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    /// Echoed for tracing only; servers must not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub victim: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// `validation`, `unsupported`, `unavailable` or `internal`.
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbRequest {
    pub sample: Sample,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbResponse {
    pub variants: Vec<PerturbedVariant>,
}

/// Features from one sample's responses, embedded with the hash embedder
/// seeded by `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesRequest {
    pub y: String,
    pub base: CompletionRecord,
    pub perturbed: Vec<CompletionRecord>,
    pub seed: u64,
    #[serde(default)]
    pub mask: FeatureMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesResponse {
    pub features: Vec<f64>,
    pub degenerate_variants: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub model: MlpModel,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub predictions: Vec<ClassProbability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub config: PipelineConfig,
    pub n_members: usize,
    pub n_nonmembers: usize,
    #[serde(default)]
    pub memorize_all: bool,
}

/// Every artifact of the run, keyed by file name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub files: BTreeMap<String, String>,
}
