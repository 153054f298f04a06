//! Text embeddings and cosine similarity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::codeast::{tokenize, TokenKind};
use crate::seed::keyed_rng;

pub const EMBED_DIM: usize = 768;

/// Token sequences beyond this length are truncated before pooling.
pub const MAX_EMBED_TOKENS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty or whitespace-only text")]
    EmptyInput,
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("zero-norm embedding")]
    Degenerate,
    #[error("embedding service unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding service protocol error: {0}")]
    Protocol(String),
    #[error("no precomputed embedding for text ({0} bytes)")]
    Missing(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Validates dimension and finiteness.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.len() != EMBED_DIM {
            return Err(EmbedError::Dimension {
                expected: EMBED_DIM,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `(a . b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::Degenerate);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Deterministic bag-of-tokens embedder: each distinct token maps to a
/// seeded pseudo-random unit vector and a text embeds to the mean over its
/// token sequence. Comments are not tokens.
#[derive(Debug, Default)]
pub struct HashEmbedder {
    seed: u64,
    cache: Mutex<HashMap<String, Arc<[f64]>>>,
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn token_vector(&self, token: &str) -> Arc<[f64]> {
        if let Some(v) = self.cache.lock().unwrap().get(token) {
            return v.clone();
        }
        let mut rng = keyed_rng(self.seed, &[b"embed", token.as_bytes()]);
        let mut v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        let v: Arc<[f64]> = v.into();
        self.cache.lock().unwrap().insert(token.to_string(), v.clone());
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        embed_hash_with(self, text)
    }
}

fn embed_hash_with(emb: &HashEmbedder, text: &str) -> Result<Embedding, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let mut tokens: Vec<_> = tokenize(text).into_iter().filter(|t| t.kind != TokenKind::Comment).collect();
    if tokens.len() > MAX_EMBED_TOKENS {
        tracing::warn!(tokens = tokens.len(), "truncating text to {MAX_EMBED_TOKENS} tokens before embedding");
        tokens.truncate(MAX_EMBED_TOKENS);
    }
    if tokens.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let mut acc = vec![0.0; EMBED_DIM];
    for t in &tokens {
        let v = emb.token_vector(t.text(text));
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Embedding::new(acc)
}

/// One-shot hash embedding of `text` (see [`HashEmbedder`]).
pub fn embed_hash(text: &str, seed: u64) -> Result<Embedding, EmbedError> {
    embed_hash_with(&HashEmbedder::new(seed), text)
}

/// Embeddings fetched ahead of time, keyed by exact text.
#[derive(Debug, Default, Clone)]
pub struct PrecomputedEmbedder {
    table: HashMap<String, Embedding>,
}

impl PrecomputedEmbedder {
    pub fn new(table: HashMap<String, Embedding>) -> Self {
        Self { table }
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.table.get(text).cloned().ok_or(EmbedError::Missing(text.len()))
    }
}
