//! Accuracy metrics (HR@K, NDCG@K against a single held-out target per
//! user) and diversity metrics (entropy and type-token ratio of the code
//! tokens appearing in recommendation lists).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("K must be >= 1")]
    InvalidK,
    #[error("no recommendations to score")]
    Empty,
    #[error("rank lists and targets differ in length: {lists} vs {targets}")]
    LengthMismatch { lists: usize, targets: usize },
}

/// One user's evaluation view: the ranked item ids and the held-out target.
#[derive(Debug, Clone)]
pub struct RankedUser {
    pub ranking: Vec<String>,
    pub target: String,
}

/// 1-based rank of the target, or `None` when absent (treated as rank
/// infinity, contributing 0).
fn target_rank(user: &RankedUser) -> Option<usize> {
    user.ranking.iter().position(|i| *i == user.target).map(|p| p + 1)
}

/// Mean over users of "target appears in the top K".
pub fn hr_at_k<F: Scalar>(users: &[RankedUser], k: usize) -> Result<F, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    if users.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = users
        .iter()
        .filter(|u| target_rank(u).is_some_and(|r| r <= k))
        .count();
    Ok(F::from_usize(hits) / F::from_usize(users.len()))
}

/// Single-target NDCG: per user 1/log2(rank+1) when rank <= K else 0,
/// averaged over users (the ideal DCG is 1).
pub fn ndcg_at_k<F: Scalar>(users: &[RankedUser], k: usize) -> Result<F, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    if users.is_empty() {
        return Err(MetricsError::Empty);
    }
    let two = F::from_f64(2.0);
    let total: F = users
        .iter()
        .map(|u| match target_rank(u) {
            Some(r) if r <= k => F::one() / F::from_usize(r + 1).log(two),
            _ => F::zero(),
        })
        .sum();
    Ok(total / F::from_usize(users.len()))
}

/// Shannon entropy (bits) of the empirical distribution over all code
/// tokens of every recommended item across all users and ranks.
pub fn entropy_of_codes<F: Scalar>(lists: &[Vec<Vec<String>>]) -> Result<F, MetricsError> {
    let counts = token_counts(lists)?;
    let total: usize = counts.values().sum();
    let total_f = F::from_usize(total);
    let two = F::from_f64(2.0);
    let entropy = counts
        .values()
        .map(|&c| {
            let p = F::from_usize(c) / total_f;
            -(p * p.log(two))
        })
        .sum();
    Ok(entropy)
}

/// Type-token ratio: unique code tokens / total code-token occurrences.
pub fn ttr<F: Scalar>(lists: &[Vec<Vec<String>>]) -> Result<F, MetricsError> {
    let counts = token_counts(lists)?;
    let total: usize = counts.values().sum();
    Ok(F::from_usize(counts.len()) / F::from_usize(total))
}

fn token_counts(lists: &[Vec<Vec<String>>]) -> Result<BTreeMap<String, usize>, MetricsError> {
    let mut counts = BTreeMap::new();
    for user in lists {
        for item in user {
            for tok in item {
                *counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(counts)
}

/// Run-level evaluation summary. Maps are keyed by K; BTreeMap keeps JSON
/// output deterministically ordered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub entropy: f64,
    pub ttr: f64,
    pub n_users: usize,
    /// Identifies the config that produced this report.
    pub config_fingerprint: String,
}

/// Score ranked lists against targets at each K and compute diversity over
/// the token lists (typically the top-10 code tokens per user).
pub fn evaluate(
    users: &[RankedUser],
    token_lists: &[Vec<Vec<String>>],
    ks: &[usize],
    config_fingerprint: String,
) -> Result<EvalReport, MetricsError> {
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        hr.insert(k, hr_at_k::<f64>(users, k)?);
        ndcg.insert(k, ndcg_at_k::<f64>(users, k)?);
    }
    Ok(EvalReport {
        hr,
        ndcg,
        entropy: entropy_of_codes::<f64>(token_lists)?,
        ttr: ttr::<f64>(token_lists)?,
        n_users: users.len(),
        config_fingerprint,
    })
}
