//! Attack metrics (TPR, FPR, ROC AUC) and the two reference baselines:
//! exact-match (GT-Match) and perplexity ranking (PPL-Rank).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Membership;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("predictions contain only {0:?} ground truth; both classes are required")]
    SingleClass(Membership),
    #[error("no predictions")]
    Empty,
    #[error("score {score} for {sample_id} is not finite or outside [0, 1]")]
    Score { sample_id: String, score: f64 },
    #[error("perplexity {value} for {sample_id} is not finite")]
    Perplexity { sample_id: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub truth: Membership,
    /// Member probability or rank score; higher means more member-like.
    pub score: f64,
    pub label: Membership,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Counts,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
    pub counts: Counts,
    pub roc_points: Vec<(f64, f64)>,
}

fn validate(predictions: &[Prediction]) -> Result<(), MetricsError> {
    let Some(first) = predictions.first() else {
        return Err(MetricsError::Empty);
    };
    if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
        return Err(MetricsError::Score { sample_id: p.sample_id.clone(), score: p.score });
    }
    if predictions.iter().all(|p| p.truth == first.truth) {
        return Err(MetricsError::SingleClass(first.truth));
    }
    Ok(())
}

pub fn confusion(predictions: &[Prediction]) -> Result<Confusion, MetricsError> {
    validate(predictions)?;
    let mut c = Counts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for p in predictions {
        match (p.truth, p.label) {
            (Membership::Member, Membership::Member) => c.tp += 1,
            (Membership::Nonmember, Membership::Member) => c.fp += 1,
            (Membership::Nonmember, Membership::Nonmember) => c.tn += 1,
            (Membership::Member, Membership::Nonmember) => c.fn_ += 1,
        }
    }
    Ok(Confusion {
        counts: c,
        tpr: c.tp as f64 / (c.tp + c.fn_) as f64,
        fpr: c.fp as f64 / (c.fp + c.tn) as f64,
    })
}

/// Cumulative (fp, tp) counts after each distinct score threshold,
/// descending, starting at (0, 0). Tied scores move in a single step.
fn roc_counts(predictions: &[Prediction]) -> Vec<(u64, u64)> {
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut steps = vec![(0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            match sorted[i].truth {
                Membership::Member => tp += 1,
                Membership::Nonmember => fp += 1,
            }
            i += 1;
        }
        steps.push((fp, tp));
    }
    steps
}

/// ROC curve from (0, 0) to (1, 1) as (fpr, tpr) points.
pub fn roc_points(predictions: &[Prediction]) -> Result<Vec<(f64, f64)>, MetricsError> {
    validate(predictions)?;
    let steps = roc_counts(predictions);
    let (neg, pos) = *steps.last().unwrap();
    Ok(steps.iter().map(|&(fp, tp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)).collect())
}

/// Trapezoid-rule area under the ROC curve as an exact fraction
/// (twice the area in count units, 2 * positives * negatives).
pub fn auc_fraction(predictions: &[Prediction]) -> Result<(u128, u128), MetricsError> {
    validate(predictions)?;
    let steps = roc_counts(predictions);
    let (neg, pos) = *steps.last().unwrap();
    let twice_area: u128 = steps.windows(2).map(|w| u128::from(w[1].0 - w[0].0) * u128::from(w[1].1 + w[0].1)).sum();
    Ok((twice_area, 2 * u128::from(pos) * u128::from(neg)))
}

/// Trapezoid-rule area under the ROC curve, divided once from
/// [`auc_fraction`].
pub fn auc(predictions: &[Prediction]) -> Result<f64, MetricsError> {
    let (num, den) = auc_fraction(predictions)?;
    Ok(num as f64 / den as f64)
}

pub fn evaluate(predictions: &[Prediction]) -> Result<EvalReport, MetricsError> {
    let c = confusion(predictions)?;
    let roc = roc_points(predictions)?;
    Ok(EvalReport {
        tpr: c.tpr,
        fpr: c.fpr,
        auc: auc(predictions)?,
        counts: c.counts,
        roc_points: roc,
    })
}

fn normalize_completion(s: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Exact-match baseline: member iff the completion equals the ground truth
/// up to trailing whitespace on each line and trailing blank lines.
pub fn gt_match(y: &str, y_hat: &str) -> Membership {
    if normalize_completion(y) == normalize_completion(y_hat) {
        Membership::Member
    } else {
        Membership::Nonmember
    }
}

/// Perplexity-rank baseline: the ⌈n/2⌉ lowest-perplexity samples are
/// members. Ties break by sample id. Output follows input order.
pub fn ppl_rank(scored: &[(String, f64)]) -> Result<Vec<(String, Membership)>, MetricsError> {
    if scored.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some((id, v)) = scored.iter().find(|(_, v)| !v.is_finite()) {
        return Err(MetricsError::Perplexity { sample_id: id.clone(), value: *v });
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then_with(|| scored[a].0.cmp(&scored[b].0)));
    let cutoff = scored.len().div_ceil(2);
    let mut labels = vec![Membership::Nonmember; scored.len()];
    for &i in &order[..cutoff] {
        labels[i] = Membership::Member;
    }
    Ok(scored.iter().zip(labels).map(|((id, _), l)| (id.clone(), l)).collect())
}

/// Rank score used for the PPL-Rank AUC: `1 / ppl`, which lies in (0, 1]
/// for perplexities >= 1 and decreases with perplexity.
pub fn ppl_score(ppl: f64) -> f64 {
    (1.0 / ppl).clamp(0.0, 1.0)
}
