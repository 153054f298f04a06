//! File-level stage runner: loads input artifacts, checks they belong to
//! the current configuration, runs one stage and writes its artifact.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::*;
use crate::config::{EmbedderSpec, PipelineConfig, VictimSpec};
use crate::corpus::{Corpus, Sample};
use crate::embed::{Embedder, HashEmbedder};
use crate::pipeline::{self, PipelineError};
use crate::victim::Victim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Perturb,
    Query,
    Featurize,
    Train,
    Infer,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Ingest, Stage::Perturb, Stage::Query, Stage::Featurize, Stage::Train, Stage::Infer, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Perturb => "perturb",
            Stage::Query => "query",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn output(self) -> ArtifactKind {
        match self {
            Stage::Ingest => ArtifactKind::Dataset,
            Stage::Perturb => ArtifactKind::Variants,
            Stage::Query => ArtifactKind::Responses,
            Stage::Featurize => ArtifactKind::Features,
            Stage::Train => ArtifactKind::Model,
            Stage::Infer => ArtifactKind::Predictions,
            Stage::Evaluate => ArtifactKind::Report,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Externally supplied victim and embedder. When absent, the simulator and
/// hash embedder named in the config are built on demand.
#[derive(Default, Clone, Copy)]
pub struct Services<'a> {
    pub victim: Option<&'a dyn Victim>,
    pub embedder: Option<&'a dyn Embedder>,
}

/// The built-in embedder for a config, or `None` if it names a remote one.
pub fn local_embedder(config: &PipelineConfig) -> Option<HashEmbedder> {
    match config.embedder {
        EmbedderSpec::Hash => Some(HashEmbedder::new(config.seed)),
        EmbedderSpec::Remote { .. } => None,
    }
}

#[derive(Default)]
struct Inputs {
    corpus: Option<Corpus>,
    dataset: Option<Dataset>,
    variants: Option<Vec<VariantLine>>,
    responses: Option<Vec<ResponseLine>>,
    features: Option<Vec<FeatureLine>>,
    model: Option<ModelDoc>,
    predictions: Option<Vec<PredictionLine>>,
}

impl Inputs {
    fn add(&mut self, path: &Path, artifact: Artifact) -> Result<(), PipelineError> {
        let kind = artifact.kind();
        let taken = match artifact {
            Artifact::Corpus(c) => self.corpus.replace(c).is_some(),
            Artifact::Dataset(d) => self.dataset.replace(*d).is_some(),
            Artifact::Variants(v) => self.variants.replace(v).is_some(),
            Artifact::Responses(r) => self.responses.replace(r).is_some(),
            Artifact::Features(f) => self.features.replace(f).is_some(),
            Artifact::Model(m) => self.model.replace(*m).is_some(),
            Artifact::Predictions(p) => self.predictions.replace(p).is_some(),
            Artifact::Report(_) => return Err(PipelineError::Validation(format!("{}: a report is not an input to any stage", path.display()))),
        };
        if taken {
            return Err(PipelineError::Validation(format!("{}: more than one {kind} input", path.display())));
        }
        Ok(())
    }
}

fn need<T>(slot: Option<T>, artifact: ArtifactKind) -> Result<T, PipelineError> {
    slot.ok_or(PipelineError::Dependency { stage: artifact.producer(), artifact })
}

fn check_fresh(config: &PipelineConfig, path: &Path, artifact: &Artifact) -> Result<(), PipelineError> {
    let expected = config.config_hash();
    if let Some(p) = artifact.provenances().into_iter().find(|p| p.config_hash != expected) {
        tracing::debug!(path = %path.display(), "stale artifact");
        return Err(PipelineError::StaleArtifact {
            stage: p.artifact.producer(),
            artifact: p.artifact,
            found: p.config_hash.clone(),
            expected,
        });
    }
    Ok(())
}

/// Writes via a sibling temporary file so readers never see partial output.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, content).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Runs `stage` on the artifacts at `inputs` and writes the result to `out`.
/// Inputs are recognized by content, so their order does not matter.
pub fn run_stage(stage: Stage, config: &PipelineConfig, inputs: &[PathBuf], out: &Path, force: bool, services: Services<'_>) -> Result<ArtifactKind, PipelineError> {
    config.validate()?;
    let mut bag = Inputs::default();
    for path in inputs {
        let artifact = load_artifact(path)?;
        if !force {
            check_fresh(config, path, &artifact)?;
        }
        bag.add(path, artifact)?;
    }
    let content = execute(stage, config, bag, services)?;
    write_atomic(out, &content)?;
    tracing::info!(stage = %stage, out = %out.display(), "wrote {}", stage.output());
    Ok(stage.output())
}

fn execute(stage: Stage, config: &PipelineConfig, bag: Inputs, services: Services<'_>) -> Result<String, PipelineError> {
    let embedder_slot = local_embedder(config);
    let embedder = || -> Result<&dyn Embedder, PipelineError> {
        services
            .embedder
            .or(embedder_slot.as_ref().map(|e| e as &dyn Embedder))
            .ok_or_else(|| PipelineError::Validation("remote embedder configured but no embedding client supplied".into()))
    };
    Ok(match stage {
        Stage::Ingest => to_json_doc(&pipeline::ingest(config, need(bag.corpus, ArtifactKind::Corpus)?)?),
        Stage::Perturb => {
            let lines = match (bag.dataset, bag.corpus) {
                (Some(d), _) => pipeline::perturb(config, &d.split_samples()),
                (None, Some(c)) => pipeline::perturb(config, &c.samples.iter().collect::<Vec<&Sample>>()),
                (None, None) => return Err(PipelineError::Dependency { stage: "ingest", artifact: ArtifactKind::Dataset }),
            };
            to_jsonl(&lines)
        }
        Stage::Query => {
            let dataset = need(bag.dataset, ArtifactKind::Dataset)?;
            let variants = need(bag.variants, ArtifactKind::Variants)?;
            let sim;
            let victim: &dyn Victim = match (services.victim, &config.victim) {
                (Some(v), _) => v,
                (None, VictimSpec::Simulator(_)) => {
                    sim = pipeline::simulator_for(config, &dataset)?;
                    &sim
                }
                (None, VictimSpec::Remote { .. }) => return Err(PipelineError::Validation("remote victim configured but no victim client supplied".into())),
            };
            to_jsonl(&pipeline::query(config, &dataset.split_samples(), &variants, victim)?)
        }
        Stage::Featurize => {
            let dataset = need(bag.dataset, ArtifactKind::Dataset)?;
            let responses = need(bag.responses, ArtifactKind::Responses)?;
            to_jsonl(&pipeline::featurize(config, &dataset, &responses, embedder()?)?)
        }
        Stage::Train => to_json_doc(&pipeline::train(config, &need(bag.features, ArtifactKind::Features)?)?),
        Stage::Infer => {
            let model = need(bag.model, ArtifactKind::Model)?;
            to_jsonl(&pipeline::infer(config, &model, &need(bag.features, ArtifactKind::Features)?)?)
        }
        Stage::Evaluate => {
            let predictions = need(bag.predictions, ArtifactKind::Predictions)?;
            let dataset = need(bag.dataset, ArtifactKind::Dataset)?;
            let responses = need(bag.responses, ArtifactKind::Responses)?;
            to_json_doc(&pipeline::evaluate(config, &dataset, &predictions, &responses)?)
        }
    })
}
