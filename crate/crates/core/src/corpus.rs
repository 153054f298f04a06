//! Benchmark ingestion and member / non-member split planning.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::keyed_rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?}: {field} is empty")]
    EmptyField { id: String, field: &'static str },
    #[error("known fraction must be in (0, 1], got {0}")]
    Fraction(f64),
    #[error("corpus needs at least one {0} sample")]
    MissingPool(&'static str),
    #[error("cannot balance training split: need {needed} test_pool samples, have {available}")]
    Capacity { needed: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    TrainPool,
    TestPool,
}

/// One (prefix, suffix) completion task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub prefix: String,
    pub suffix: String,
    pub origin: Origin,
}

impl Sample {
    /// Builds a sample, stripping trailing whitespace from prefix and suffix.
    pub fn new(
        id: impl Into<String>,
        prefix: &str,
        suffix: &str,
        origin: Origin,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let prefix = prefix.trim_end().to_string();
        let suffix = suffix.trim_end().to_string();
        if prefix.is_empty() {
            return Err(CorpusError::EmptyField { id, field: "prefix" });
        }
        if suffix.is_empty() {
            return Err(CorpusError::EmptyField { id, field: "suffix" });
        }
        Ok(Self {
            id,
            prefix,
            suffix,
            origin,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids_with_origin(&self, origin: Origin) -> Vec<&str> {
        self.samples
            .iter()
            .filter(|s| s.origin == origin)
            .map(|s| s.id.as_str())
            .collect()
    }

    /// Parses JSONL text. Blank lines are ignored; line numbers are 1-based.
    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Record {
            id: String,
            prefix: String,
            suffix: String,
            origin: Origin,
        }

        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            samples.push(Sample::new(rec.id, &rec.prefix, &rec.suffix, rec.origin)?);
        }
        Self::new(name, samples)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

/// Reads a JSONL corpus file; the corpus is named after the file stem.
pub fn ingest(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::from_jsonl(name, &text)
}

/// Which ids the adversary trains on and which are held out for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub known_fraction: f64,
    pub seed: u64,
    pub train_members: Vec<String>,
    pub train_nonmembers: Vec<String>,
    pub eval_members: Vec<String>,
    pub eval_nonmembers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    Nonmember,
}

impl SplitPlan {
    /// Membership label of `id` as assigned by this plan, if any.
    pub fn label_of(&self, id: &str) -> Option<Membership> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.train_members) || has(&self.eval_members) {
            Some(Membership::Member)
        } else if has(&self.train_nonmembers) || has(&self.eval_nonmembers) {
            Some(Membership::Nonmember)
        } else {
            None
        }
    }

    pub fn train_ids(&self) -> impl Iterator<Item = (&str, Membership)> {
        tagged(&self.train_members, &self.train_nonmembers)
    }

    pub fn eval_ids(&self) -> impl Iterator<Item = (&str, Membership)> {
        tagged(&self.eval_members, &self.eval_nonmembers)
    }
}

fn tagged<'a>(
    members: &'a [String],
    nonmembers: &'a [String],
) -> impl Iterator<Item = (&'a str, Membership)> {
    members
        .iter()
        .map(|s| (s.as_str(), Membership::Member))
        .chain(nonmembers.iter().map(|s| (s.as_str(), Membership::Nonmember)))
}

/// Draws the adversary's known members, an equal number of known
/// non-members, and balanced evaluation lists from what remains.
///
/// Lists come back in corpus order regardless of the draw order.
pub fn make_split(corpus: &Corpus, known_fraction: f64, seed: u64) -> Result<SplitPlan, CorpusError> {
    if !(known_fraction > 0.0 && known_fraction <= 1.0) {
        return Err(CorpusError::Fraction(known_fraction));
    }
    let train_pool = corpus.ids_with_origin(Origin::TrainPool);
    let test_pool = corpus.ids_with_origin(Origin::TestPool);
    if train_pool.is_empty() {
        return Err(CorpusError::MissingPool("train_pool"));
    }
    if test_pool.is_empty() {
        return Err(CorpusError::MissingPool("test_pool"));
    }

    // 1e-9 absorbs products like 0.29 * 100 = 28.999999999999996.
    let known = ((known_fraction * train_pool.len() as f64 + 1e-9).floor() as usize)
        .clamp(1, train_pool.len());
    if test_pool.len() < known {
        return Err(CorpusError::Capacity {
            needed: known,
            available: test_pool.len(),
        });
    }

    let mut members = train_pool.clone();
    members.shuffle(&mut keyed_rng(seed, &[b"split", b"members"]));
    let mut nonmembers = test_pool.clone();
    nonmembers.shuffle(&mut keyed_rng(seed, &[b"split", b"nonmembers"]));

    let (train_m, rest_m) = members.split_at(known);
    let (train_n, rest_n) = nonmembers.split_at(known);
    let eval_len = rest_m.len().min(rest_n.len());

    let in_corpus_order = |chosen: &[&str], pool: &[&str]| -> Vec<String> {
        let set: HashSet<&str> = chosen.iter().copied().collect();
        pool.iter()
            .filter(|id| set.contains(*id))
            .map(|id| id.to_string())
            .collect()
    };

    Ok(SplitPlan {
        known_fraction,
        seed,
        train_members: in_corpus_order(train_m, &train_pool),
        train_nonmembers: in_corpus_order(train_n, &test_pool),
        eval_members: in_corpus_order(&rest_m[..eval_len], &train_pool),
        eval_nonmembers: in_corpus_order(&rest_n[..eval_len], &test_pool),
    })
}
