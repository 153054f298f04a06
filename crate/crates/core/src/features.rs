//! Perplexity, normalized perplexity and the 27-dimensional behavioral
//! feature vector.
//!
//! Layout of the flattened vector:
//!
//! | index  | entry                                   |
//! |--------|-----------------------------------------|
//! | 0      | sim(y, base completion)                 |
//! | 1..=11 | sim(y, completion of variant slot 0..10) |
//! | 12     | mean of the 12 similarities             |
//! | 13     | population std of the 12 similarities   |
//! | 14..=24| normalized perplexity of slots 0..10    |
//! | 25     | mean of the 11 normalized perplexities  |
//! | 26     | population std of the same              |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Membership;
use crate::embed::{cosine, EmbedError, Embedder};
use crate::perturb::{Family, SLOT_FAMILIES, VARIANT_COUNT};
use crate::victim::CompletionRecord;

pub const FEATURE_DIM: usize = 27;

pub const SIM_MEAN: usize = 12;
pub const SIM_STD: usize = 13;
pub const PPL_MEAN: usize = 25;
pub const PPL_STD: usize = 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("perplexity of an empty token sequence")]
    EmptySequence,
    #[error("log-probability {value} at position {index} is positive or not finite")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("base perplexity {0} is below 1")]
    BasePerplexity(f64),
    #[error("expected {expected} perturbed completions, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("ground-truth suffix is empty")]
    EmptyTarget,
    #[error("embedding failed for {}: {source}", variant.map_or("the base completion or target".to_string(), |v| format!("variant {v}")))]
    Embed { variant: Option<usize>, source: EmbedError },
    #[error("feature index {0} is outside 0..27")]
    MaskIndex(usize),
    #[error("the perturbation mask drops every variant")]
    EmptyMask,
    #[error("feature vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// `exp(-mean(logprobs))`.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64, FeatureError> {
    if token_logprobs.is_empty() {
        return Err(FeatureError::EmptySequence);
    }
    if let Some((index, &value)) = token_logprobs.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
        return Err(FeatureError::InvalidLogprob { index, value });
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

/// `(ppl_i - ppl_base) / ppl_base`.
pub fn normalized_perplexity(ppl_i: f64, ppl_base: f64) -> Result<f64, FeatureError> {
    if ppl_base.is_nan() || ppl_base < 1.0 {
        return Err(FeatureError::BasePerplexity(ppl_base));
    }
    Ok((ppl_i - ppl_base) / ppl_base)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation. Exactly zero when all entries are equal.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sim_base: f64,
    pub sim_perturbed: Vec<f64>,
    pub sim_mean: f64,
    pub sim_std: f64,
    pub ppl_perturbed: Vec<f64>,
    pub ppl_mean: f64,
    pub ppl_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Membership>,
    /// Variant slots whose completion was empty.
    #[serde(default)]
    pub degenerate_variants: Vec<usize>,
}

impl FeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.push(self.sim_base);
        v.extend(&self.sim_perturbed);
        v.push(self.sim_mean);
        v.push(self.sim_std);
        v.extend(&self.ppl_perturbed);
        v.push(self.ppl_mean);
        v.push(self.ppl_std);
        v
    }

    /// Applies `mask` and returns the surviving entries in layout order.
    /// Statistics are recomputed over the surviving variant slots.
    pub fn masked(&self, mask: &FeatureMask) -> Result<Vec<f64>, FeatureError> {
        mask.validate()?;
        let slots: Vec<usize> = mask.kept_slots();
        let mut sims = vec![self.sim_base];
        sims.extend(slots.iter().map(|&s| self.sim_perturbed[s]));
        let ppls: Vec<f64> = slots.iter().map(|&s| self.ppl_perturbed[s]).collect();

        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(FEATURE_DIM);
        entries.push((0, self.sim_base));
        entries.extend(slots.iter().map(|&s| (1 + s, self.sim_perturbed[s])));
        entries.push((SIM_MEAN, mean(&sims)));
        entries.push((SIM_STD, population_std(&sims)));
        entries.extend(slots.iter().map(|&s| (14 + s, self.ppl_perturbed[s])));
        entries.push((PPL_MEAN, mean(&ppls)));
        entries.push((PPL_STD, population_std(&ppls)));
        Ok(entries
            .into_iter()
            .filter(|(i, _)| !mask.drop_features.contains(i))
            .map(|(_, v)| v)
            .collect())
    }
}

/// Ablation mask: whole perturbation families and/or single feature
/// indices (in the unmasked 27-entry layout) to drop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureMask {
    pub drop_families: BTreeSet<Family>,
    pub drop_features: BTreeSet<usize>,
}

impl FeatureMask {
    pub fn is_empty(&self) -> bool {
        self.drop_families.is_empty() && self.drop_features.is_empty()
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if let Some(&i) = self.drop_features.iter().find(|&&i| i >= FEATURE_DIM) {
            return Err(FeatureError::MaskIndex(i));
        }
        if self.kept_slots().is_empty() {
            return Err(FeatureError::EmptyMask);
        }
        Ok(())
    }

    pub fn kept_slots(&self) -> Vec<usize> {
        (0..VARIANT_COUNT).filter(|&s| !self.drop_families.contains(&SLOT_FAMILIES[s])).collect()
    }

    /// Dimension of vectors produced under this mask.
    pub fn output_dim(&self) -> usize {
        let slots = self.kept_slots().len();
        let dropped_slots = VARIANT_COUNT - slots;
        let removed_by_family: BTreeSet<usize> = (0..VARIANT_COUNT)
            .filter(|s| !self.kept_slots().contains(s))
            .flat_map(|s| [1 + s, 14 + s])
            .collect();
        let extra = self.drop_features.iter().filter(|i| !removed_by_family.contains(i)).count();
        FEATURE_DIM - 2 * dropped_slots - extra
    }
}

/// Assembles the feature vector for one sample. `perturbed` must hold the
/// 11 completions in variant-slot order.
pub fn build_features(
    y: &str,
    base: &CompletionRecord,
    perturbed: &[CompletionRecord],
    embedder: &dyn Embedder,
) -> Result<FeatureVector, FeatureError> {
    if perturbed.len() != VARIANT_COUNT {
        return Err(FeatureError::Arity { expected: VARIANT_COUNT, got: perturbed.len() });
    }
    if y.trim().is_empty() {
        return Err(FeatureError::EmptyTarget);
    }
    let target = embedder.embed(y).map_err(|source| FeatureError::Embed { variant: None, source })?;

    // Completions with nothing embeddable count as maximal deviation.
    let sim_to = |text: &str, variant: Option<usize>| -> Result<Option<f64>, FeatureError> {
        match embedder.embed(text) {
            Ok(e) => cosine(&target, &e).map(Some).map_err(|source| FeatureError::Embed { variant, source }),
            Err(EmbedError::EmptyInput) => Ok(None),
            Err(source) => Err(FeatureError::Embed { variant, source }),
        }
    };

    let sim_base = sim_to(&base.text, None)?.unwrap_or(0.0);
    let ppl_base = sequence_perplexity(&base.token_logprobs)?;
    let mut degenerate_variants = Vec::new();
    let mut sim_perturbed = Vec::with_capacity(VARIANT_COUNT);
    let mut ppl_perturbed = Vec::with_capacity(VARIANT_COUNT);
    for (i, rec) in perturbed.iter().enumerate() {
        let sim = sim_to(&rec.text, Some(i))?;
        if sim.is_none() {
            degenerate_variants.push(i);
        }
        sim_perturbed.push(sim.unwrap_or(0.0));
        ppl_perturbed.push(normalized_perplexity(sequence_perplexity(&rec.token_logprobs)?, ppl_base)?);
    }

    let mut sims = vec![sim_base];
    sims.extend(&sim_perturbed);
    Ok(FeatureVector {
        sim_base,
        sim_mean: mean(&sims),
        sim_std: population_std(&sims),
        ppl_mean: mean(&ppl_perturbed),
        ppl_std: population_std(&ppl_perturbed),
        sim_perturbed,
        ppl_perturbed,
        label: None,
        degenerate_variants,
    })
}

/// Perplexity of a completion; an empty completion has nothing to be
/// uncertain about and scores 1.
fn sequence_perplexity(token_logprobs: &[f64]) -> Result<f64, FeatureError> {
    if token_logprobs.is_empty() {
        return Ok(1.0);
    }
    perplexity(token_logprobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedding, HashEmbedder, EMBED_DIM};
    use crate::victim::RecordMode;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn rec(text: &str, lps: &[f64]) -> CompletionRecord {
        CompletionRecord {
            prompt_id: "p".into(),
            text: text.into(),
            tokens: lps.iter().map(|_| "t".to_string()).collect(),
            token_logprobs: lps.to_vec(),
            mode: RecordMode::Completion,
        }
    }

    #[test]
    fn perplexity_cases() {
        let ln = f64::ln;
        assert!((perplexity(&[ln(0.5), ln(0.5)]).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(perplexity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((perplexity(&[ln(0.25), ln(0.5)]).unwrap() - 2.828_427_12).abs() < 1e-8);
        assert_eq!(perplexity(&[]), Err(FeatureError::EmptySequence));
        assert_eq!(perplexity(&[-0.1, 0.3]), Err(FeatureError::InvalidLogprob { index: 1, value: 0.3 }));
    }

    #[test]
    fn normalized_perplexity_cases() {
        assert_eq!(normalized_perplexity(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(normalized_perplexity(3.0, 2.0).unwrap(), 0.5);
        assert_eq!(normalized_perplexity(1.0, 2.0).unwrap(), -0.5);
        assert_eq!(normalized_perplexity(1.0, 0.9), Err(FeatureError::BasePerplexity(0.9)));
    }

    #[test]
    fn stable_member_limit() {
        let e = HashEmbedder::new(0);
        let y = "return a + b";
        let base = rec(y, &[-0.2, -0.1]);
        let fv = build_features(y, &base, &vec![base.clone(); 11], &e).unwrap();
        let v = fv.to_vec();
        assert_eq!(v.len(), FEATURE_DIM);
        let mut expected = vec![1.0; 12];
        expected.extend([1.0, 0.0]);
        expected.extend([0.0; 13]);
        for (a, b) in v.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        assert_eq!(fv.sim_std, 0.0);
    }

    /// Embedder returning fixed vectors so similarities are chosen exactly.
    struct Table(HashMap<String, Embedding>);

    impl Embedder for Table {
        fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
            if text.trim().is_empty() {
                return Err(EmbedError::EmptyInput);
            }
            Ok(self.0[text].clone())
        }
    }

    fn unit(angle: f64) -> Embedding {
        let mut v = vec![0.0; EMBED_DIM];
        v[0] = angle.cos();
        v[1] = angle.sin();
        Embedding::new(v).unwrap()
    }

    #[test]
    fn hand_computed_statistics() {
        let table = Table(
            [("y", unit(0.0)), ("half", unit(std::f64::consts::FRAC_PI_3))]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        );
        let fv = build_features("y", &rec("y", &[-0.5]), &vec![rec("half", &[-0.5]); 11], &table).unwrap();
        assert!((fv.sim_base - 1.0).abs() < 1e-12);
        assert!(fv.sim_perturbed.iter().all(|s| (s - 0.5).abs() < 1e-12));
        assert!((fv.sim_mean - 0.541_666_67).abs() < 1e-8);
        // Population std: sqrt(((0.5-m)^2 * 11 + (1-m)^2) / 12).
        let m = 6.5 / 12.0;
        let oracle = ((11.0 * (0.5f64 - m).powi(2) + (1.0f64 - m).powi(2)) / 12.0).sqrt();
        assert!((fv.sim_std - oracle).abs() < 1e-12);
        assert!((fv.sim_std - 0.138_192_70).abs() < 1e-8);
    }

    #[test]
    fn empty_completion_is_degenerate() {
        let e = HashEmbedder::new(0);
        let mut perturbed = vec![rec("x + 1", &[-0.3]); 11];
        perturbed[4] = rec("", &[]);
        let fv = build_features("x + 1", &rec("x + 1", &[-0.3]), &perturbed, &e).unwrap();
        assert_eq!(fv.degenerate_variants, vec![4]);
        assert_eq!(fv.sim_perturbed[4], 0.0);
        assert!(fv.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn arity_and_target_errors() {
        let e = HashEmbedder::new(0);
        let r = rec("x", &[-0.1]);
        assert_eq!(build_features("x", &r, &vec![r.clone(); 10], &e), Err(FeatureError::Arity { expected: 11, got: 10 }));
        assert_eq!(build_features("  ", &r, &vec![r.clone(); 11], &e), Err(FeatureError::EmptyTarget));
    }

    fn sample_vector() -> FeatureVector {
        let e = HashEmbedder::new(3);
        let y = "total = sum(values)\nreturn total";
        let perturbed: Vec<CompletionRecord> = (0..11)
            .map(|i| rec(&format!("total = {i}\nreturn total"), &[-0.1 * (i + 1) as f64, -0.2]))
            .collect();
        build_features(y, &rec("return total", &[-0.3, -0.1]), &perturbed, &e).unwrap()
    }

    #[test]
    fn family_mask_arithmetic() {
        let fv = sample_vector();
        let mask = FeatureMask { drop_families: [Family::Idl].into(), ..Default::default() };
        let v = fv.masked(&mask).unwrap();
        assert_eq!(v.len(), 21);
        assert_eq!(mask.output_dim(), 21);
        // Statistics are recomputed over the eight surviving slots.
        let mut sims = vec![fv.sim_base];
        sims.extend(&fv.sim_perturbed[..8]);
        assert_eq!(v[9], mean(&sims));
        assert_eq!(v[10], population_std(&sims));
        assert_eq!(&v[11..19], &fv.ppl_perturbed[..8]);
        assert_eq!(v[19], mean(&fv.ppl_perturbed[..8]));

        let no_std = FeatureMask { drop_features: [SIM_STD].into(), ..Default::default() };
        let v = fv.masked(&no_std).unwrap();
        assert_eq!(v.len(), 26);
        assert_eq!(no_std.output_dim(), 26);
        let full = fv.to_vec();
        assert_eq!(&v[..13], &full[..13]);
        assert_eq!(&v[13..], &full[14..]);

        assert_eq!(fv.masked(&FeatureMask::default()).unwrap(), full);
        let bad = FeatureMask { drop_features: [27].into(), ..Default::default() };
        assert_eq!(fv.masked(&bad), Err(FeatureError::MaskIndex(27)));
        let all = FeatureMask { drop_families: Family::ALL.into_iter().collect(), ..Default::default() };
        assert_eq!(fv.masked(&all), Err(FeatureError::EmptyMask));
    }

    #[test]
    fn output_dim_counts_overlap_once() {
        let mask = FeatureMask { drop_families: [Family::Idc].into(), drop_features: [1, 13].into() };
        assert_eq!(mask.output_dim(), 27 - 4 - 1);
        assert_eq!(sample_vector().masked(&mask).unwrap().len(), mask.output_dim());
    }

    proptest! {
        #[test]
        fn perplexity_monotone(lps in proptest::collection::vec(-5.0f64..0.0, 1..20), i in 0usize..20, d in 0.01f64..2.0) {
            let i = i % lps.len();
            let mut lower = lps.clone();
            lower[i] -= d;
            prop_assert!(perplexity(&lower).unwrap() > perplexity(&lps).unwrap());
            prop_assert!(perplexity(&lps).unwrap() >= 1.0);
        }

        #[test]
        fn normalized_strictly_increasing(base in 1.0f64..50.0, a in 1.0f64..50.0, b in 1.0f64..50.0) {
            let na = normalized_perplexity(a, base).unwrap();
            let nb = normalized_perplexity(b, base).unwrap();
            prop_assert_eq!(a < b, na < nb);
            prop_assert_eq!(na == 0.0, a == base);
        }

        #[test]
        fn permuting_variants_permutes_entries(
            texts in proptest::collection::vec("[a-c]( [+*] [a-c]){0,3}", 11),
            lps in proptest::collection::vec(proptest::collection::vec(-3.0f64..0.0, 1..6), 11),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let e = HashEmbedder::new(1);
            let recs: Vec<CompletionRecord> = texts.iter().zip(&lps).map(|(t, l)| rec(t, l)).collect();
            let base = rec("a + b", &[-0.4, -0.2]);
            let fv = build_features("a + b", &base, &recs, &e).unwrap();
            let mut order: Vec<usize> = (0..11).collect();
            order.shuffle(&mut crate::seed::keyed_rng(perm_seed, &[]));
            let permuted: Vec<CompletionRecord> = order.iter().map(|&i| recs[i].clone()).collect();
            let pv = build_features("a + b", &base, &permuted, &e).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert_eq!(pv.sim_perturbed[k], fv.sim_perturbed[i]);
                prop_assert_eq!(pv.ppl_perturbed[k], fv.ppl_perturbed[i]);
            }
            for (a, b) in [(pv.sim_mean, fv.sim_mean), (pv.sim_std, fv.sim_std), (pv.ppl_mean, fv.ppl_mean), (pv.ppl_std, fv.ppl_std)] {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let v = fv.to_vec();
            prop_assert_eq!(v.len(), FEATURE_DIM);
            prop_assert!(v[..12].iter().all(|s| (-1.0..=1.0).contains(s)));
            prop_assert!(v[SIM_STD] >= 0.0 && v[PPL_STD] >= 0.0);
            let all_equal = v[..12].windows(2).all(|w| w[0] == w[1]);
            prop_assert_eq!(v[SIM_STD] == 0.0, all_equal);
        }
    }
}
