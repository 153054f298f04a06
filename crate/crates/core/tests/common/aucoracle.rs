//! Pair-counting AUC (Mann-Whitney statistic) and random prediction sets.

use mia_core::corpus::Membership;
use mia_core::metrics::Prediction;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn brute_force_auc(preds: &[Prediction]) -> f64 {
    let (num, den) = half_wins(preds);
    num as f64 / den as f64
}

/// Pair-counting statistic as (half-wins, 2 * members * nonmembers).
pub fn half_wins(preds: &[Prediction]) -> (u128, u128) {
    let members: Vec<f64> = preds.iter().filter(|p| p.truth == Membership::Member).map(|p| p.score).collect();
    let nonmembers: Vec<f64> = preds.iter().filter(|p| p.truth == Membership::Nonmember).map(|p| p.score).collect();
    // Counted in half-wins so the sum stays an exact integer.
    let mut half_wins = 0u128;
    for m in &members {
        for n in &nonmembers {
            if m > n {
                half_wins += 2;
            } else if m == n {
                half_wins += 1;
            }
        }
    }
    (half_wins, 2 * (members.len() * nonmembers.len()) as u128)
}

/// A prediction set of 2..=200 entries with both classes and scores drawn
/// from a small grid so ties are common.
pub fn random_set(seed: u64) -> Vec<Prediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=200);
    let levels = rng.gen_range(1..=20);
    (0..n)
        .map(|i| {
            let truth = if i == 0 {
                Membership::Member
            } else if i == 1 || !rng.gen_bool(0.5) {
                Membership::Nonmember
            } else {
                Membership::Member
            };
            let score = rng.gen_range(0..=levels) as f64 / levels as f64;
            Prediction { sample_id: format!("s{i:03}"), truth, score, label: Membership::Nonmember }
        })
        .collect()
}

pub fn negate_truth(preds: &[Prediction]) -> Vec<Prediction> {
    preds
        .iter()
        .map(|p| Prediction {
            truth: match p.truth {
                Membership::Member => Membership::Nonmember,
                Membership::Nonmember => Membership::Member,
            },
            ..p.clone()
        })
        .collect()
}

/// Strictly increasing map of [0, 1] into [0, 1].
pub fn monotone(preds: &[Prediction]) -> Vec<Prediction> {
    preds.iter().map(|p| Prediction { score: p.score.powi(3) * 0.5 + 0.25, ..p.clone() }).collect()
}
