use serde::{Deserialize, Serialize};

use crate::bias_space::NamedTokens;
use crate::embedding::{cosine, EmbeddingSet};
use crate::error::{Error, Result};
use crate::grad::SeededRng;
use crate::parallel;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub target: String,
    pub attribute_set: String,
    /// Mean of `1 - cos` over the in-vocabulary attribute words.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub per_pair: Vec<PairDistance>,
    pub mac: f64,
    pub p_value: Option<f64>,
    pub n_pairs: usize,
    pub oov_targets: Vec<String>,
    pub oov_attributes: Vec<String>,
    /// Attribute sets with no word in the vocabulary.
    pub skipped_sets: Vec<String>,
}

/// Mean over (target, attribute set) of the mean cosine distance between
/// the target and the set's words.
pub fn mac(set: &EmbeddingSet, targets: &[String], attribute_sets: &[NamedTokens]) -> Result<MacReport> {
    let mut oov_targets = Vec::new();
    let in_targets: Vec<(&str, Vec<f64>)> = targets
        .iter()
        .filter_map(|t| match set.vector(t) {
            Some(v) => Some((t.as_str(), v.as_slice().to_vec())),
            None => {
                oov_targets.push(t.clone());
                None
            }
        })
        .collect();
    if in_targets.is_empty() {
        return Err(Error::MissingTokens(oov_targets));
    }

    let mut oov_attributes = Vec::new();
    let mut skipped_sets = Vec::new();
    let mut sets: Vec<(&str, Vec<Vec<f64>>)> = Vec::new();
    for a in attribute_sets {
        let mut rows = Vec::new();
        for w in &a.tokens {
            match set.vector(w) {
                Some(v) => rows.push(v.as_slice().to_vec()),
                None => oov_attributes.push(w.clone()),
            }
        }
        if rows.is_empty() {
            skipped_sets.push(a.name.clone());
        } else {
            sets.push((a.name.as_str(), rows));
        }
    }
    if sets.is_empty() {
        return Err(Error::EmptyData("no attribute set has an in-vocabulary word".into()));
    }

    let per_target = parallel::ordered_map(&in_targets, parallel::thread_count(), |(t, tv)| {
        sets.iter()
            .map(|(name, rows)| {
                let mut sum = 0.0;
                for r in rows {
                    sum += 1.0 - cosine(tv, r)?;
                }
                Ok(PairDistance {
                    target: t.to_string(),
                    attribute_set: name.to_string(),
                    distance: sum / rows.len() as f64,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut per_pair = Vec::with_capacity(in_targets.len() * sets.len());
    for part in per_target {
        per_pair.extend(part?);
    }
    let mac = per_pair.iter().map(|p| p.distance).sum::<f64>() / per_pair.len() as f64;
    Ok(MacReport {
        n_pairs: per_pair.len(),
        per_pair,
        mac,
        p_value: None,
        oov_targets,
        oov_attributes,
        skipped_sets,
    })
}

/// Sign-flip counts at most this many pairs exhaustively.
const MAX_EXACT_PAIRS: usize = 30;

/// Two-sided paired sign-flip test on the per-pair deltas `after - before`.
///
/// When `2^n <= n_perm` every sign pattern is enumerated and the exact
/// p-value is returned; otherwise `n_perm` random patterns are drawn and
/// `p = (hits + 1) / (n_perm + 1)`.
pub fn mac_significance(before: &MacReport, after: &MacReport, n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::InvalidConfig("n_perm must be positive".into()));
    }
    if before.per_pair.len() != after.per_pair.len() {
        return Err(Error::PairMismatch(format!(
            "{} pairs before, {} after",
            before.per_pair.len(),
            after.per_pair.len()
        )));
    }
    if let Some((a, b)) = before
        .per_pair
        .iter()
        .zip(&after.per_pair)
        .find(|(a, b)| a.target != b.target || a.attribute_set != b.attribute_set)
    {
        return Err(Error::PairMismatch(format!(
            "({}, {}) vs ({}, {})",
            a.target, a.attribute_set, b.target, b.attribute_set
        )));
    }
    let deltas: Vec<f64> = before
        .per_pair
        .iter()
        .zip(&after.per_pair)
        .map(|(a, b)| b.distance - a.distance)
        .collect();
    Ok(sign_flip_p_value(&deltas, n_perm, seed))
}

/// Shared by [`mac_significance`]; exposed for testing the two routes.
pub fn sign_flip_p_value(deltas: &[f64], n_perm: usize, seed: u64) -> f64 {
    let n = deltas.len();
    if n == 0 {
        return 1.0;
    }
    let observed = mean_abs(deltas.iter().copied());
    // Sign flips reorder nothing, but sums of mixed signs can round
    // differently; treat values this close to the observed one as equal.
    let threshold = observed - 1e-12 * observed.max(f64::MIN_POSITIVE);
    if n <= MAX_EXACT_PAIRS && (1usize << n) <= n_perm {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let flipped = deltas
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| if mask >> i & 1 == 1 { -d } else { d });
                mean_abs(flipped) >= threshold
            })
            .count();
        return hits as f64 / total as f64;
    }
    let mut rng = SeededRng::new(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        let flipped: Vec<f64> = deltas.iter().map(|&d| if rng.coin() { -d } else { d }).collect();
        if mean_abs(flipped.into_iter()) >= threshold {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (n_perm + 1) as f64
}

fn mean_abs(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (sum / n as f64).abs()
}
