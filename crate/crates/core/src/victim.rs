//! Black-box access to the model under audit.
//!
//! [`Victim`] is the query surface the pipeline needs: greedy completion
//! with per-token log-probabilities, plus an optional teacher-forced
//! scoring mode. [`SimVictim`] is a deterministic stand-in whose outputs
//! are stable under prompt rewrites for memorized samples and unstable
//! otherwise.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codeast::{split_pieces, tokenize, TokenKind};
use crate::corpus::{Corpus, Sample};
use crate::seed::{keyed_rng, keyed_seed};

pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VictimError {
    #[error("victim unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("victim response is missing or has an invalid `{field}` field")]
    Protocol { field: String },
    #[error("victim does not support {0}")]
    Unsupported(&'static str),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("victim rejected the request: {0}")]
    Rejected(String),
    #[error("invalid simulator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    #[default]
    Completion,
    Score,
}

/// Victim output for one prompt (or one scored text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    /// Sample id for the original prompt, `"<id>#<slot>"` for a variant.
    pub prompt_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Natural-log probabilities, one per token.
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_completion")]
    pub mode: RecordMode,
}

fn is_completion(m: &RecordMode) -> bool {
    *m == RecordMode::Completion
}

impl CompletionRecord {
    pub fn validate(&self) -> Result<(), VictimError> {
        if self.tokens.len() != self.token_logprobs.len() {
            return Err(VictimError::Protocol { field: "token_logprobs".into() });
        }
        if self.token_logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err(VictimError::Protocol { field: "token_logprobs".into() });
        }
        Ok(())
    }
}

pub fn variant_prompt_id(sample_id: &str, slot: usize) -> String {
    format!("{sample_id}#{slot}")
}

pub fn score_prompt_id(sample_id: &str) -> String {
    format!("{sample_id}#score")
}

pub trait Victim: Send + Sync {
    /// Greedy completion of `prompt`.
    fn complete(&self, prompt: &str, prompt_id: &str, max_tokens: usize) -> Result<CompletionRecord, VictimError>;

    /// Teacher-forced per-token log-probabilities of `text`.
    fn score(&self, text: &str) -> Result<Vec<f64>, VictimError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimVictimConfig {
    pub memorized_ids: BTreeSet<String>,
    pub member_noise: f64,
    pub nonmember_noise: f64,
    pub member_logprob: f64,
    pub nonmember_logprob: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SimVictimConfig {
    fn default() -> Self {
        Self {
            memorized_ids: BTreeSet::new(),
            member_noise: 0.02,
            nonmember_noise: 0.30,
            member_logprob: -0.32,
            nonmember_logprob: -0.35,
            jitter: 0.25,
            seed: 0,
        }
    }
}

impl SimVictimConfig {
    pub fn validate(&self) -> Result<(), VictimError> {
        let bad = |m: &str| Err(VictimError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.member_noise) || !(0.0..=1.0).contains(&self.nonmember_noise) {
            return bad("noise levels must lie in [0, 1]");
        }
        if self.member_noise >= self.nonmember_noise {
            return bad("member_noise must be below nonmember_noise");
        }
        if !(self.member_logprob <= 0.0 && self.nonmember_logprob <= 0.0) {
            return bad("log-probabilities must be <= 0");
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be finite and >= 0");
        }
        Ok(())
    }
}

/// Tokens substituted into noisy completions.
const FILLERS: &[&str] = &["x", "0", "1", "tmp", "+", "-", "None", "i", "result", "return", "(", ")", "value", ":", "n"];

/// Undoes `name_<4 digits>` renames and drops blank lines, so any rewrite
/// of a prefix reduces to the prefix's lines plus a few inserted ones.
fn canonical_lines(text: &str) -> Vec<String> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for t in tokenize(text) {
        if t.kind != TokenKind::Name {
            continue;
        }
        let name = t.text(text);
        if let Some((base, digits)) = name.rsplit_once('_') {
            if !base.is_empty() && digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) && digits.as_bytes()[0] != b'0' {
                out.push_str(&text[last..t.start]);
                out.push_str(base);
                last = t.end;
            }
        }
    }
    out.push_str(&text[last..]);
    out.lines()
        .map(|l| l.trim_end().to_string())
        .filter(|l| !l.trim().is_empty())
        .collect()
}

fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Upper bound on lines a single rewrite adds.
const MAX_INSERTED_LINES: usize = 3;

#[derive(Debug)]
struct SimInner {
    config: SimVictimConfig,
    samples: Vec<Sample>,
    canonical: Vec<Vec<String>>,
    exact: HashMap<Vec<String>, usize>,
}

/// Deterministic simulated victim. Cheap to clone and safe to share.
#[derive(Debug, Clone)]
pub struct SimVictim {
    inner: Arc<SimInner>,
}

/// Builds a simulator over `corpus`.
pub fn sim_victim(config: SimVictimConfig, corpus: &Corpus) -> Result<SimVictim, VictimError> {
    SimVictim::new(config, corpus)
}

impl SimVictim {
    pub fn new(config: SimVictimConfig, corpus: &Corpus) -> Result<Self, VictimError> {
        config.validate()?;
        if let Some(unknown) = config.memorized_ids.iter().find(|id| corpus.get(id).is_none()) {
            return Err(VictimError::Config(format!("memorized id {unknown:?} is not in the corpus")));
        }
        let canonical: Vec<Vec<String>> = corpus.samples.iter().map(|s| canonical_lines(&s.prefix)).collect();
        let mut exact = HashMap::new();
        for (i, c) in canonical.iter().enumerate() {
            exact.entry(c.clone()).or_insert(i);
        }
        Ok(Self {
            inner: Arc::new(SimInner {
                config,
                samples: corpus.samples.clone(),
                canonical,
                exact,
            }),
        })
    }

    pub fn config(&self) -> &SimVictimConfig {
        &self.inner.config
    }

    /// Recovers the corpus sample a (possibly rewritten) prompt came from.
    pub fn resolve(&self, prompt: &str) -> Option<&Sample> {
        let lines = canonical_lines(prompt);
        if let Some(&i) = self.inner.exact.get(&lines) {
            return Some(&self.inner.samples[i]);
        }
        let mut best: Option<usize> = None;
        for (i, c) in self.inner.canonical.iter().enumerate() {
            if c.is_empty() || c.len() > lines.len() || lines.len() - c.len() > MAX_INSERTED_LINES {
                continue;
            }
            if best.is_some_and(|b| self.inner.canonical[b].len() >= c.len()) {
                continue;
            }
            if is_subsequence(c, &lines) {
                best = Some(i);
            }
        }
        best.map(|i| &self.inner.samples[i])
    }

    fn is_member(&self, id: &str) -> bool {
        self.inner.config.memorized_ids.contains(id)
    }

    fn noisy_suffix(&self, suffix: &str, key: &[&[u8]], noise: f64, base_lp: f64, max_tokens: usize) -> (Vec<String>, Vec<f64>) {
        let cfg = &self.inner.config;
        let mut rng = keyed_rng(cfg.seed, key);
        let mut pieces = split_pieces(suffix);
        pieces.truncate(max_tokens);
        let n = pieces.len();
        // Stochastic rounding keeps the replaced count within one token of noise * n.
        let target = noise * n as f64;
        let k = ((target + rng.gen::<f64>()).floor() as usize).min(n);
        let mut chosen: Vec<usize> = sample_indices(&mut rng, n, k).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let piece = &pieces[i];
            let ws_len = piece.len() - piece.trim_start().len();
            let original = piece[ws_len..].to_string();
            let mut filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            if filler == original {
                filler = FILLERS[(FILLERS.iter().position(|f| *f == filler).unwrap() + 1) % FILLERS.len()];
            }
            pieces[i] = format!("{}{filler}", &piece[..ws_len]);
        }
        let logprobs = (0..pieces.len())
            .map(|_| (base_lp + cfg.jitter * rng.gen_range(-1.0..=1.0)).min(0.0))
            .collect();
        (pieces, logprobs)
    }
}

impl Victim for SimVictim {
    fn complete(&self, prompt: &str, prompt_id: &str, max_tokens: usize) -> Result<CompletionRecord, VictimError> {
        if prompt.trim().is_empty() {
            return Err(VictimError::EmptyPrompt);
        }
        let cfg = &self.inner.config;
        let (tokens, token_logprobs) = match self.resolve(prompt) {
            Some(s) if self.is_member(&s.id) => {
                self.noisy_suffix(&s.suffix, &[b"member", s.id.as_bytes()], cfg.member_noise, cfg.member_logprob, max_tokens)
            }
            Some(s) => self.noisy_suffix(&s.suffix, &[b"prompt", prompt.as_bytes()], cfg.nonmember_noise, cfg.nonmember_logprob, max_tokens),
            None => {
                let tokens: Vec<String> = vec!["pass".into()].into_iter().take(max_tokens).collect();
                let lps = vec![cfg.nonmember_logprob; tokens.len()];
                (tokens, lps)
            }
        };
        let record = CompletionRecord {
            prompt_id: prompt_id.to_string(),
            text: tokens.concat(),
            tokens,
            token_logprobs,
            mode: RecordMode::Completion,
        };
        record.validate()?;
        Ok(record)
    }

    /// Tokens inside a memorized sample's suffix score exactly
    /// `member_logprob`; all others score `nonmember_logprob` plus
    /// token-keyed jitter.
    fn score(&self, text: &str) -> Result<Vec<f64>, VictimError> {
        if text.trim().is_empty() {
            return Err(VictimError::EmptyPrompt);
        }
        let cfg = &self.inner.config;
        let memorized_from = self
            .inner
            .samples
            .iter()
            .filter(|s| self.is_member(&s.id) && text.trim_end().ends_with(s.suffix.as_str()))
            .map(|s| text.trim_end().len() - s.suffix.len())
            .min();
        let toks = tokenize(text);
        let n = split_pieces(text).len();
        let mut out = Vec::with_capacity(n);
        for (i, t) in toks.iter().enumerate().take(n) {
            if memorized_from.is_some_and(|from| t.start >= from) {
                out.push(cfg.member_logprob);
            } else {
                let h = keyed_seed(cfg.seed, &[b"score", t.text(text).as_bytes(), &(i as u64).to_le_bytes()]);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                out.push((cfg.nonmember_logprob + cfg.jitter * (2.0 * u - 1.0)).min(0.0));
            }
        }
        if toks.is_empty() {
            out.push(cfg.nonmember_logprob);
        }
        Ok(out)
    }
}
