//! Pipeline configuration, loaded from TOML.
//!
//! ```toml
//! seed = 42
//! known_fraction = 0.2
//!
//! [victim]
//! kind = "simulator"
//! member_noise = 0.02
//!
//! [mask]
//! drop_families = ["IDL"]
//! drop_features = [13]
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMask};
use crate::mlpcls::MlpConfig;
use crate::victim::DEFAULT_MAX_TOKENS;

/// Environment variable holding the bearer token for a remote victim.
pub const VICTIM_TOKEN_ENV: &str = "MIA_VICTIM_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub known_fraction: f64,
    pub max_tokens: usize,
    /// Prompts longer than this many tokens lose whole leading lines.
    pub context_tokens: usize,
    pub concurrency_limit: usize,
    pub victim: VictimSpec,
    pub embedder: EmbedderSpec,
    pub mask: FeatureMask,
    pub classifier: ClassifierSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            known_fraction: 0.2,
            max_tokens: DEFAULT_MAX_TOKENS,
            context_tokens: 4096,
            concurrency_limit: 8,
            victim: VictimSpec::default(),
            embedder: EmbedderSpec::default(),
            mask: FeatureMask::default(),
            classifier: ClassifierSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VictimSpec {
    Simulator(SimulatorSettings),
    Remote { url: String },
}

impl Default for VictimSpec {
    fn default() -> Self {
        VictimSpec::Simulator(SimulatorSettings::default())
    }
}

/// Simulator parameters; the seed comes from the pipeline seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSettings {
    /// Ids the simulated model memorized. Absent means every train-pool sample.
    pub memorized: Option<Vec<String>>,
    pub member_noise: f64,
    pub nonmember_noise: f64,
    pub member_logprob: f64,
    pub nonmember_logprob: f64,
    pub jitter: f64,
}

impl Default for SimulatorSettings {
    fn default() -> Self {
        let d = crate::victim::SimVictimConfig::default();
        Self {
            memorized: None,
            member_noise: d.member_noise,
            nonmember_noise: d.nonmember_noise,
            member_logprob: d.member_logprob,
            nonmember_logprob: d.nonmember_logprob,
            jitter: d.jitter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    #[default]
    Hash,
    Remote {
        url: String,
    },
}

/// Classifier hyperparameters; widths and seed are derived elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        let d = MlpConfig::default();
        Self {
            hidden_dims: d.hidden_dims,
            dropout_rate: d.dropout_rate,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            epochs: d.epochs,
            batch_size: d.batch_size,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.known_fraction > 0.0 && self.known_fraction <= 1.0) {
            return bad(format!("known_fraction {} must lie in (0, 1]", self.known_fraction));
        }
        if self.max_tokens == 0 || self.context_tokens == 0 {
            return bad("max_tokens and context_tokens must be positive".into());
        }
        if self.concurrency_limit == 0 {
            return bad("concurrency_limit must be at least 1".into());
        }
        self.mask.validate().map_err(|e: FeatureError| ConfigError::Invalid(e.to_string()))?;
        self.mlp_config(self.mask.output_dim())
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        let c = &self.classifier;
        MlpConfig {
            input_dim,
            hidden_dims: c.hidden_dims.clone(),
            output_dim: 2,
            dropout_rate: c.dropout_rate,
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: self.seed,
        }
    }

    /// SHA-256 of the settings that determine artifact contents. The
    /// ablation mask and concurrency limit are excluded so one set of
    /// victim responses serves every ablation.
    pub fn config_hash(&self) -> String {
        let mut relevant = self.clone();
        relevant.mask = FeatureMask::default();
        relevant.concurrency_limit = 1;
        let canonical = serde_json::to_string(&relevant).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
