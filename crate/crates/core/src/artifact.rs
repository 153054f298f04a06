//! On-disk stage artifacts. Every record or document carries a
//! [`Provenance`] block naming the artifact kind, so inputs are recognized
//! by content rather than by file name.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::corpus::{Corpus, CorpusError, Membership, Sample, SplitPlan};
use crate::metrics::{Counts, EvalReport};
use crate::mlpcls::MlpModel;
use crate::perturb::PerturbedVariant;
use crate::victim::CompletionRecord;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Corpus,
    Dataset,
    Variants,
    Responses,
    Features,
    Model,
    Predictions,
    Report,
}

impl ArtifactKind {
    /// Stage that writes this artifact.
    pub fn producer(self) -> &'static str {
        match self {
            ArtifactKind::Corpus => "corpus input",
            ArtifactKind::Dataset => "ingest",
            ArtifactKind::Variants => "perturb",
            ArtifactKind::Responses => "query",
            ArtifactKind::Features => "featurize",
            ArtifactKind::Model => "train",
            ArtifactKind::Predictions => "infer",
            ArtifactKind::Report => "evaluate",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub artifact: ArtifactKind,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(artifact: ArtifactKind, config: &PipelineConfig) -> Self {
        Self {
            artifact,
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config_hash: config.config_hash(),
        }
    }
}

/// Output of `ingest`: the corpus together with its member/non-member split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub provenance: Provenance,
    pub name: String,
    pub samples: Vec<Sample>,
    pub split: SplitPlan,
}

impl Dataset {
    pub fn corpus(&self) -> Result<Corpus, CorpusError> {
        Corpus::new(self.name.clone(), self.samples.clone())
    }

    /// Samples that appear in the split, in corpus order.
    pub fn split_samples(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| self.split.label_of(&s.id).is_some()).collect()
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.split.train_ids().any(|(x, _)| x == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantLine {
    #[serde(flatten)]
    pub variant: PerturbedVariant,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLine {
    #[serde(flatten)]
    pub record: CompletionRecord,
    /// The prompt exceeded the context budget and lost leading lines.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLine {
    pub sample_id: String,
    /// Present for samples whose membership the adversary knows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Membership>,
    pub features: Vec<f64>,
    pub degenerate_variants: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub model: MlpModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub sample_id: String,
    pub label: Membership,
    pub member_probability: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub gt_match: BaselineSummary,
    /// Absent when the victim cannot score text.
    pub ppl_rank: Option<BaselineSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub provenance: Provenance,
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
    pub counts: Counts,
    pub roc_points: Vec<(f64, f64)>,
    pub baselines: Baselines,
}

impl ReportDoc {
    pub fn new(provenance: Provenance, report: EvalReport, baselines: Baselines) -> Self {
        Self {
            provenance,
            tpr: report.tpr,
            fpr: report.fpr,
            auc: report.auc,
            counts: report.counts,
            roc_points: report.roc_points,
            baselines,
        }
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: not a recognized artifact ({message})")]
    Unrecognized { path: String, message: String },
    #[error("{path}: mixed artifact kinds ({first} and {other})")]
    Mixed { path: String, first: ArtifactKind, other: ArtifactKind },
    #[error("{0}")]
    Corpus(#[from] CorpusError),
}

/// A loaded stage input.
#[derive(Debug, Clone)]
pub enum Artifact {
    Corpus(Corpus),
    Dataset(Box<Dataset>),
    Variants(Vec<VariantLine>),
    Responses(Vec<ResponseLine>),
    Features(Vec<FeatureLine>),
    Model(Box<ModelDoc>),
    Predictions(Vec<PredictionLine>),
    Report(Box<ReportDoc>),
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Corpus(_) => ArtifactKind::Corpus,
            Artifact::Dataset(_) => ArtifactKind::Dataset,
            Artifact::Variants(_) => ArtifactKind::Variants,
            Artifact::Responses(_) => ArtifactKind::Responses,
            Artifact::Features(_) => ArtifactKind::Features,
            Artifact::Model(_) => ArtifactKind::Model,
            Artifact::Predictions(_) => ArtifactKind::Predictions,
            Artifact::Report(_) => ArtifactKind::Report,
        }
    }

    /// Provenance blocks of the artifact (none for a raw corpus).
    pub fn provenances(&self) -> Vec<&Provenance> {
        match self {
            Artifact::Corpus(_) => vec![],
            Artifact::Dataset(d) => vec![&d.provenance],
            Artifact::Variants(v) => v.iter().map(|l| &l.provenance).collect(),
            Artifact::Responses(v) => v.iter().map(|l| &l.provenance).collect(),
            Artifact::Features(v) => v.iter().map(|l| &l.provenance).collect(),
            Artifact::Model(m) => vec![&m.provenance],
            Artifact::Predictions(v) => v.iter().map(|l| &l.provenance).collect(),
            Artifact::Report(r) => vec![&r.provenance],
        }
    }
}

fn kind_of(value: &serde_json::Value) -> Option<ArtifactKind> {
    if let Some(kind) = value.get("provenance").and_then(|p| p.get("artifact")) {
        return serde_json::from_value(kind.clone()).ok();
    }
    (value.get("id").is_some() && value.get("prefix").is_some()).then_some(ArtifactKind::Corpus)
}

fn parse_lines<T: DeserializeOwned>(path: &str, text: &str) -> Result<Vec<T>, ArtifactError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ArtifactError::Parse { path: path.to_string(), line: i + 1, message: e.to_string() })
        })
        .collect()
}

fn parse_doc<T: DeserializeOwned>(path: &str, text: &str) -> Result<T, ArtifactError> {
    serde_json::from_str(text).map_err(|e| ArtifactError::Parse { path: path.to_string(), line: e.line(), message: e.to_string() })
}

/// Parses artifact text, detecting its kind from content. `name` labels
/// errors and names a raw corpus.
pub fn parse_artifact(name: &str, text: &str) -> Result<Artifact, ArtifactError> {
    if text.trim().is_empty() {
        return Ok(Artifact::Corpus(Corpus::new(corpus_name(name), vec![])?));
    }
    let whole: Option<serde_json::Value> = serde_json::from_str(text).ok();
    let is_doc = whole.as_ref().is_some_and(|v| v.is_object());
    let kind = match &whole {
        Some(v) if v.is_object() => kind_of(v),
        _ => {
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
            let v: serde_json::Value = serde_json::from_str(first)
                .map_err(|e| ArtifactError::Unrecognized { path: name.to_string(), message: e.to_string() })?;
            kind_of(&v)
        }
    };
    let Some(kind) = kind else {
        return Err(ArtifactError::Unrecognized {
            path: name.to_string(),
            message: "no provenance block and not a corpus record".into(),
        });
    };
    if !is_doc || matches!(kind, ArtifactKind::Corpus | ArtifactKind::Variants | ArtifactKind::Responses | ArtifactKind::Features | ArtifactKind::Predictions) {
        // Line-oriented: every line must be of the same kind.
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(l)
                .map_err(|e| ArtifactError::Parse { path: name.to_string(), line: i + 1, message: e.to_string() })?;
            match kind_of(&v) {
                Some(k) if k == kind => {}
                Some(other) => return Err(ArtifactError::Mixed { path: name.to_string(), first: kind, other }),
                None => {
                    return Err(ArtifactError::Parse { path: name.to_string(), line: i + 1, message: "record lacks a provenance block".into() })
                }
            }
        }
    }
    Ok(match kind {
        ArtifactKind::Corpus => Artifact::Corpus(Corpus::from_jsonl(corpus_name(name), text)?),
        ArtifactKind::Dataset => Artifact::Dataset(Box::new(parse_doc(name, text)?)),
        ArtifactKind::Variants => Artifact::Variants(parse_lines(name, text)?),
        ArtifactKind::Responses => Artifact::Responses(parse_lines(name, text)?),
        ArtifactKind::Features => Artifact::Features(parse_lines(name, text)?),
        ArtifactKind::Model => Artifact::Model(Box::new(parse_doc(name, text)?)),
        ArtifactKind::Predictions => Artifact::Predictions(parse_lines(name, text)?),
        ArtifactKind::Report => Artifact::Report(Box::new(parse_doc(name, text)?)),
    })
}

fn corpus_name(name: &str) -> String {
    Path::new(name).file_stem().map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn load_artifact(path: &Path) -> Result<Artifact, ArtifactError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io { path: display.clone(), source })?;
    parse_artifact(&display, &text)
}

/// One compact JSON object per line, newline-terminated.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Pretty-printed JSON document, newline-terminated.
pub fn to_json_doc<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serializes");
    s.push('\n');
    s
}
