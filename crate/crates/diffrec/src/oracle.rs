//! Brute-force enumeration of every decoding trajectory, used as ground
//! truth for the beam search on tiny fixtures.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::MaskPredictor;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state space too large: {size} complete sequences (limit {limit})")]
    TooLarge { size: usize, limit: usize },
    #[error("too many positions: {n} (limit {limit})")]
    TooManyPositions { n: usize, limit: usize },
}

const MAX_SEQUENCES: usize = 10_000;
const MAX_POSITIONS: usize = 6;

/// Best achievable trajectory for one complete token sequence: the maximum
/// product of per-step probabilities over all fill orders, plus one order
/// attaining it.
#[derive(Debug, Clone)]
pub struct TrajectoryScore<F> {
    pub tokens: Vec<u32>,
    pub best_log: F,
    pub best_order: Vec<usize>,
}

/// Enumerate every (order, token assignment) trajectory by depth-first
/// search and keep the best score per complete sequence. Output is sorted
/// by score descending, ties toward the lexicographically smaller sequence.
pub fn enumerate_exact<F: Scalar>(
    predictor: &dyn MaskPredictor<F>,
    history: &[u32],
) -> Result<Vec<TrajectoryScore<F>>, OracleError> {
    let sizes = predictor.slot_sizes();
    let n = sizes.len();
    if n > MAX_POSITIONS {
        return Err(OracleError::TooManyPositions {
            n,
            limit: MAX_POSITIONS,
        });
    }
    let total: usize = sizes.iter().product();
    if total > MAX_SEQUENCES {
        return Err(OracleError::TooLarge {
            size: total,
            limit: MAX_SEQUENCES,
        });
    }

    let mut best: HashMap<Vec<u32>, (F, Vec<usize>)> = HashMap::new();
    let mut state: Vec<Option<u32>> = vec![None; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    dfs(
        predictor,
        history,
        &mut state,
        &mut order,
        F::zero(),
        &mut best,
    );

    let mut out: Vec<TrajectoryScore<F>> = best
        .into_iter()
        .map(|(tokens, (best_log, best_order))| TrajectoryScore {
            tokens,
            best_log,
            best_order,
        })
        .collect();
    out.sort_by(|a, b| {
        b.best_log
            .partial_cmp(&a.best_log)
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(out)
}

fn dfs<F: Scalar>(
    predictor: &dyn MaskPredictor<F>,
    history: &[u32],
    state: &mut Vec<Option<u32>>,
    order: &mut Vec<usize>,
    log_score: F,
    best: &mut HashMap<Vec<u32>, (F, Vec<usize>)>,
) {
    if state.iter().all(|s| s.is_some()) {
        let tokens: Vec<u32> = state.iter().map(|s| s.unwrap()).collect();
        match best.get_mut(&tokens) {
            Some(entry) if entry.0 >= log_score => {}
            Some(entry) => *entry = (log_score, order.clone()),
            None => {
                best.insert(tokens, (log_score, order.clone()));
            }
        }
        return;
    }
    let dists = predictor.predict(history, state);
    for p in 0..state.len() {
        if state[p].is_some() {
            continue;
        }
        let dist = dists[p].as_ref().expect("masked position scored");
        order.push(p);
        for (tok, &prob) in dist.iter().enumerate() {
            state[p] = Some(tok as u32);
            dfs(predictor, history, state, order, log_score + prob.ln(), best);
        }
        state[p] = None;
        order.pop();
    }
}

/// How a search result relates to the oracle ranking.
#[derive(Debug, Clone)]
pub struct CompareReport<F> {
    /// Search's best sequence equals the oracle's best-score sequence.
    pub rank1_match: bool,
    /// Every search result appears among the oracle's top `k` sequences.
    pub topk_subset: bool,
    /// Largest relative score error over matched sequences.
    pub max_score_rel_err: F,
}

/// Compare decoded beams (token sequence, probability-space score) against
/// the oracle's exhaustive ranking.
pub fn compare_with_search<F: Scalar>(
    oracle: &[TrajectoryScore<F>],
    search: &[(Vec<u32>, F)],
    k: usize,
) -> CompareReport<F> {
    let rank1_match = match (oracle.first(), search.first()) {
        (Some(o), Some(s)) => o.tokens == s.0,
        _ => false,
    };
    let topk: Vec<&Vec<u32>> = oracle.iter().take(k).map(|t| &t.tokens).collect();
    let topk_subset = search.iter().all(|(tokens, _)| topk.contains(&tokens));
    let mut max_err = F::zero();
    for (tokens, score) in search {
        if let Some(o) = oracle.iter().find(|t| &t.tokens == tokens) {
            let exact = o.best_log.exp();
            let denom = exact.max(F::from_f64(1e-300));
            let err = (*score - exact).abs() / denom;
            max_err = max_err.max(err);
        }
    }
    CompareReport {
        rank1_match,
        topk_subset,
        max_score_rel_err: max_err,
    }
}
