//! Stage functions of the audit pipeline and the one-shot synthetic run.
//!
//! Each stage maps typed inputs to a typed artifact; file handling lives in
//! [`crate::stage`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::*;
use crate::codeast::tokenize;
use crate::config::{PipelineConfig, VictimSpec};
use crate::corpus::{make_split, Corpus, CorpusError, Membership, Sample};
use crate::embed::Embedder;
use crate::features::{build_features, perplexity, FeatureError};
use crate::metrics::{self, gt_match, ppl_rank, ppl_score, MetricsError, Prediction};
use crate::mlpcls::{self, MlpError};
use crate::perturb::{generate_variants, VARIANT_COUNT};
use crate::synth::synthetic_corpus;
use crate::victim::{score_prompt_id, variant_prompt_id, CompletionRecord, RecordMode, SimVictim, SimVictimConfig, Victim, VictimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("missing {artifact} artifact; run `{stage}` first")]
    Dependency { stage: &'static str, artifact: ArtifactKind },
    #[error("{artifact} artifact was produced with config {found}, current config is {expected}; rerun `{stage}` or pass --force")]
    StaleArtifact { stage: &'static str, artifact: ArtifactKind, found: String, expected: String },
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    /// Process exit status: 1 for validation problems, 2 for missing or
    /// stale inputs and unreachable services.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            _ => 2,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => PipelineError::Io(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

impl From<VictimError> for PipelineError {
    fn from(e: VictimError) -> Self {
        match e {
            VictimError::Transport { .. } => PipelineError::Transport(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Validation(e.to_string())
            }
        }
    )*};
}
validation_from!(FeatureError, MlpError, MetricsError, crate::config::ConfigError);

impl From<ArtifactError> for PipelineError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Io { .. } => PipelineError::Io(e.to_string()),
            _ => PipelineError::Validation(e.to_string()),
        }
    }
}

/// Maps `f` over `items` on up to `limit` threads. Output order follows
/// input order; the first error in input order wins.
pub fn parallel_map<T, R, E, F>(items: &[T], limit: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let workers = limit.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item processed")).collect()
}

/// Splits the corpus and packages it for the later stages.
pub fn ingest(config: &PipelineConfig, corpus: Corpus) -> Result<Dataset, PipelineError> {
    let split = make_split(&corpus, config.known_fraction, config.seed)?;
    Ok(Dataset {
        provenance: Provenance::new(ArtifactKind::Dataset, config),
        name: corpus.name,
        samples: corpus.samples,
        split,
    })
}

/// 11 variants per sample, in sample order then slot order.
pub fn perturb(config: &PipelineConfig, samples: &[&Sample]) -> Vec<VariantLine> {
    let provenance = Provenance::new(ArtifactKind::Variants, config);
    samples
        .iter()
        .flat_map(|s| generate_variants(s, config.seed))
        .map(|variant| VariantLine { variant, provenance: provenance.clone() })
        .collect()
}

/// Drops whole leading lines until the prompt fits in `budget` tokens.
pub fn fit_context(prompt: &str, budget: usize) -> (String, bool) {
    if tokenize(prompt).len() <= budget {
        return (prompt.to_string(), false);
    }
    let lines: Vec<&str> = prompt.lines().collect();
    for start in 1..lines.len() {
        let tail = lines[start..].join("\n");
        if tokenize(&tail).len() <= budget {
            return (tail, true);
        }
    }
    let last = lines.last().copied().unwrap_or_default();
    (last.to_string(), true)
}

enum Query {
    Complete { prompt: String, prompt_id: String, truncated: bool },
    Score { text: String, prompt_id: String },
}

/// Queries the victim with every original prefix and variant, and asks it
/// to score each full sample for the perplexity baseline.
pub fn query(config: &PipelineConfig, samples: &[&Sample], variants: &[VariantLine], victim: &dyn Victim) -> Result<Vec<ResponseLine>, PipelineError> {
    let mut by_parent: HashMap<&str, Vec<&VariantLine>> = HashMap::new();
    for v in variants {
        by_parent.entry(v.variant.parent_id.as_str()).or_default().push(v);
    }
    let mut work = Vec::with_capacity(samples.len() * (VARIANT_COUNT + 2));
    for s in samples {
        let mut vs = by_parent.remove(s.id.as_str()).unwrap_or_default();
        vs.sort_by_key(|v| v.variant.index);
        let slots: Vec<usize> = vs.iter().map(|v| v.variant.index).collect();
        if slots != (0..VARIANT_COUNT).collect::<Vec<_>>() {
            return Err(PipelineError::Validation(format!("sample {} has variant slots {slots:?}, expected 0..{VARIANT_COUNT}", s.id)));
        }
        let (prompt, truncated) = fit_context(&s.prefix, config.context_tokens);
        work.push(Query::Complete { prompt, prompt_id: s.id.clone(), truncated });
        for v in vs {
            let (prompt, truncated) = fit_context(&v.variant.text, config.context_tokens);
            work.push(Query::Complete { prompt, prompt_id: variant_prompt_id(&s.id, v.variant.index), truncated });
        }
        work.push(Query::Score { text: format!("{}\n{}", s.prefix, s.suffix), prompt_id: score_prompt_id(&s.id) });
    }
    if let Some(orphan) = by_parent.keys().next() {
        return Err(PipelineError::Validation(format!("variants reference unknown sample {orphan}")));
    }

    let provenance = Provenance::new(ArtifactKind::Responses, config);
    let results = parallel_map(&work, config.concurrency_limit, |q| -> Result<Option<ResponseLine>, VictimError> {
        match q {
            Query::Complete { prompt, prompt_id, truncated } => {
                let record = victim.complete(prompt, prompt_id, config.max_tokens)?;
                record.validate()?;
                Ok(Some(ResponseLine { record, truncated: *truncated, provenance: provenance.clone() }))
            }
            Query::Score { text, prompt_id } => match victim.score(text) {
                Ok(token_logprobs) => {
                    let record = CompletionRecord {
                        prompt_id: prompt_id.clone(),
                        text: String::new(),
                        tokens: crate::codeast::split_pieces(text).into_iter().take(token_logprobs.len()).collect(),
                        token_logprobs,
                        mode: RecordMode::Score,
                    };
                    Ok(Some(ResponseLine { record, truncated: false, provenance: provenance.clone() }))
                }
                Err(VictimError::Unsupported(_)) => Ok(None),
                Err(e) => Err(e),
            },
        }
    })?;
    let scored = results.iter().flatten().any(|r| r.record.mode == RecordMode::Score);
    if !scored && !samples.is_empty() {
        tracing::warn!("victim cannot score text; the perplexity baseline will be unavailable");
    }
    let truncated = results.iter().flatten().filter(|r| r.truncated).count();
    if truncated > 0 {
        tracing::warn!(truncated, "prompts exceeded the context budget and were truncated");
    }
    Ok(results.into_iter().flatten().collect())
}

fn index_responses(responses: &[ResponseLine]) -> HashMap<(&str, RecordMode), &CompletionRecord> {
    responses.iter().map(|r| ((r.record.prompt_id.as_str(), r.record.mode), &r.record)).collect()
}

/// Builds (masked) feature vectors for every sample in the split. Only
/// samples the adversary knows carry a label.
pub fn featurize(config: &PipelineConfig, dataset: &Dataset, responses: &[ResponseLine], embedder: &dyn Embedder) -> Result<Vec<FeatureLine>, PipelineError> {
    let index = index_responses(responses);
    let provenance = Provenance::new(ArtifactKind::Features, config);
    let samples = dataset.split_samples();
    let lookup = |id: &str| -> Result<&CompletionRecord, PipelineError> {
        index
            .get(&(id, RecordMode::Completion))
            .copied()
            .ok_or_else(|| PipelineError::Validation(format!("responses lack a completion for prompt {id}")))
    };
    parallel_map(&samples, config.concurrency_limit, |s| {
        let base = lookup(&s.id)?;
        let perturbed: Vec<CompletionRecord> = (0..VARIANT_COUNT)
            .map(|slot| lookup(&variant_prompt_id(&s.id, slot)).cloned())
            .collect::<Result<_, _>>()?;
        let fv = build_features(&s.suffix, base, &perturbed, embedder).map_err(|e| match e {
            FeatureError::Embed { source: crate::embed::EmbedError::Transport { .. }, .. } => PipelineError::Transport(format!("sample {}: {e}", s.id)),
            other => PipelineError::Validation(format!("sample {}: {other}", s.id)),
        })?;
        Ok(FeatureLine {
            sample_id: s.id.clone(),
            label: dataset.is_train(&s.id).then(|| dataset.split.label_of(&s.id)).flatten(),
            features: fv.masked(&config.mask)?,
            degenerate_variants: fv.degenerate_variants,
            provenance: provenance.clone(),
        })
    })
}

/// Trains the classifier on the labeled feature records.
pub fn train(config: &PipelineConfig, features: &[FeatureLine]) -> Result<ModelDoc, PipelineError> {
    let data: Vec<(Vec<f64>, Membership)> = features.iter().filter_map(|f| f.label.map(|l| (f.features.clone(), l))).collect();
    let Some(dim) = data.first().map(|(x, _)| x.len()) else {
        return Err(PipelineError::Validation("no labeled feature records to train on".into()));
    };
    if let Some(bad) = features.iter().find(|f| f.features.len() != dim) {
        return Err(PipelineError::Validation(format!("feature record {} has {} entries, expected {dim}", bad.sample_id, bad.features.len())));
    }
    let model = mlpcls::init(config.mlp_config(dim))?;
    let (model, report) = mlpcls::train(&model, &data)?;
    tracing::info!(initial = report.initial_loss, last = report.epoch_losses.last().copied(), "trained classifier");
    Ok(ModelDoc { provenance: Provenance::new(ArtifactKind::Model, config), model })
}

/// Predicts membership for every feature record.
pub fn infer(config: &PipelineConfig, model: &ModelDoc, features: &[FeatureLine]) -> Result<Vec<PredictionLine>, PipelineError> {
    model.model.validate()?;
    let provenance = Provenance::new(ArtifactKind::Predictions, config);
    features
        .iter()
        .map(|f| {
            let p = mlpcls::predict(&model.model, &f.features).map_err(|e| PipelineError::Validation(format!("sample {}: {e}", f.sample_id)))?;
            Ok(PredictionLine {
                sample_id: f.sample_id.clone(),
                label: p.label,
                member_probability: p.member_probability,
                provenance: provenance.clone(),
            })
        })
        .collect()
}

/// Scores the predictions on the evaluation split and runs both baselines
/// on the same samples.
pub fn evaluate(config: &PipelineConfig, dataset: &Dataset, predictions: &[PredictionLine], responses: &[ResponseLine]) -> Result<ReportDoc, PipelineError> {
    let by_id: HashMap<&str, &PredictionLine> = predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let eval: Vec<(&str, Membership)> = dataset.split.eval_ids().collect();
    let mut preds = Vec::with_capacity(eval.len());
    for &(id, truth) in &eval {
        let p = by_id.get(id).ok_or_else(|| PipelineError::Validation(format!("no prediction for evaluation sample {id}")))?;
        preds.push(Prediction { sample_id: id.to_string(), truth, score: p.member_probability, label: p.label });
    }
    let report = metrics::evaluate(&preds)?;

    let index = index_responses(responses);
    let samples: HashMap<&str, &Sample> = dataset.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut exact = Vec::with_capacity(eval.len());
    for &(id, truth) in &eval {
        let base = index
            .get(&(id, RecordMode::Completion))
            .ok_or_else(|| PipelineError::Validation(format!("responses lack a completion for prompt {id}")))?;
        let label = gt_match(&samples[id].suffix, &base.text);
        let score = if label == Membership::Member { 1.0 } else { 0.0 };
        exact.push(Prediction { sample_id: id.to_string(), truth, score, label });
    }
    let gt = summarize(&exact)?;

    let mut scored = Some(Vec::with_capacity(eval.len()));
    for &(id, _) in &eval {
        match index.get(&(score_prompt_id(id).as_str(), RecordMode::Score)) {
            Some(r) => {
                if let Some(v) = scored.as_mut() {
                    v.push((id.to_string(), perplexity(&r.token_logprobs)?));
                }
            }
            None => scored = None,
        }
    }
    let ppl = match scored {
        Some(scored) => {
            let labels = ppl_rank(&scored)?;
            let preds: Vec<Prediction> = scored
                .iter()
                .zip(labels)
                .zip(&eval)
                .map(|(((id, ppl), (_, label)), &(_, truth))| Prediction { sample_id: id.clone(), truth, score: ppl_score(*ppl), label })
                .collect();
            Some(summarize(&preds)?)
        }
        None => {
            tracing::warn!("no scoring responses for the evaluation split; perplexity baseline unavailable");
            None
        }
    };
    Ok(ReportDoc::new(Provenance::new(ArtifactKind::Report, config), report, Baselines { gt_match: gt, ppl_rank: ppl }))
}

fn summarize(preds: &[Prediction]) -> Result<BaselineSummary, MetricsError> {
    let c = metrics::confusion(preds)?;
    Ok(BaselineSummary { tpr: c.tpr, fpr: c.fpr, auc: metrics::auc(preds)? })
}

/// Builds the simulated victim described by the config for `dataset`.
pub fn simulator_for(config: &PipelineConfig, dataset: &Dataset) -> Result<SimVictim, PipelineError> {
    let VictimSpec::Simulator(sim) = &config.victim else {
        return Err(PipelineError::Validation("victim is not configured as a simulator".into()));
    };
    let memorized = match &sim.memorized {
        Some(ids) => ids.iter().cloned().collect(),
        None => dataset.corpus()?.ids_with_origin(crate::corpus::Origin::TrainPool).into_iter().map(String::from).collect(),
    };
    let cfg = SimVictimConfig {
        memorized_ids: memorized,
        member_noise: sim.member_noise,
        nonmember_noise: sim.nonmember_noise,
        member_logprob: sim.member_logprob,
        nonmember_logprob: sim.nonmember_logprob,
        jitter: sim.jitter,
        seed: config.seed,
    };
    Ok(SimVictim::new(cfg, &dataset.corpus()?)?)
}

/// Every artifact of a complete run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dataset: Dataset,
    pub variants: Vec<VariantLine>,
    pub responses: Vec<ResponseLine>,
    pub features: Vec<FeatureLine>,
    pub model: ModelDoc,
    pub predictions: Vec<PredictionLine>,
    pub report: ReportDoc,
}

impl RunArtifacts {
    /// (file name, serialized content) pairs as the stage commands write them.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset.json", to_json_doc(&self.dataset)),
            ("variants.jsonl", to_jsonl(&self.variants)),
            ("responses.jsonl", to_jsonl(&self.responses)),
            ("features.jsonl", to_jsonl(&self.features)),
            ("model.json", to_json_doc(&self.model)),
            ("predictions.jsonl", to_jsonl(&self.predictions)),
            ("report.json", to_json_doc(&self.report)),
        ]
    }
}

/// Runs every stage in memory.
pub fn run_all(config: &PipelineConfig, corpus: Corpus, victim: &dyn Victim, embedder: &dyn Embedder) -> Result<RunArtifacts, PipelineError> {
    config.validate()?;
    let dataset = ingest(config, corpus)?;
    let samples = dataset.split_samples();
    let variants = perturb(config, &samples);
    let responses = query(config, &samples, &variants, victim)?;
    let features = featurize(config, &dataset, &responses, embedder)?;
    let model = train(config, &features)?;
    let predictions = infer(config, &model, &features)?;
    let report = evaluate(config, &dataset, &predictions, &responses)?;
    Ok(RunArtifacts { dataset, variants, responses, features, model, predictions, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub n_members: usize,
    pub n_nonmembers: usize,
    /// The simulated model memorized every sample, leaving no non-members.
    #[serde(default)]
    pub memorize_all: bool,
}

/// End-to-end run on a seeded synthetic corpus against the simulator.
pub fn simulate(config: &PipelineConfig, options: SimulateOptions, embedder: &dyn Embedder) -> Result<RunArtifacts, PipelineError> {
    if options.n_members < 4 || options.n_nonmembers < 4 {
        return Err(PipelineError::Validation("simulate needs at least 4 members and 4 non-members".into()));
    }
    let mut config = config.clone();
    let VictimSpec::Simulator(sim) = &mut config.victim else {
        return Err(PipelineError::Validation("simulate requires the simulator victim".into()));
    };
    sim.memorized = None;
    let (n_train, n_test) = if options.memorize_all {
        (options.n_members + options.n_nonmembers, 0)
    } else {
        (options.n_members, options.n_nonmembers)
    };
    let corpus = synthetic_corpus(config.seed, n_train, n_test)?;
    config.validate()?;
    let dataset = ingest(&config, corpus)?;
    let victim = simulator_for(&config, &dataset)?;
    let samples = dataset.split_samples();
    let variants = perturb(&config, &samples);
    let responses = query(&config, &samples, &variants, &victim)?;
    let features = featurize(&config, &dataset, &responses, embedder)?;
    let model = train(&config, &features)?;
    let predictions = infer(&config, &model, &features)?;
    let report = evaluate(&config, &dataset, &predictions, &responses)?;
    Ok(RunArtifacts { dataset, variants, responses, features, model, predictions, report })
}
