//! Deterministic probability-table predictor used as a decoder fixture.

use std::collections::HashMap;

use rand::Rng;

use super::MaskPredictor;
use crate::scalar::Scalar;

/// Explicit per-position categorical tables, optionally overridden per
/// partial decoding state. Context-free tables make best-path scores
/// order-independent, which the oracle exploits in its self-checks.
#[derive(Debug, Clone)]
pub struct FrozenTablePredictor<F> {
    slot_sizes: Vec<usize>,
    base: Vec<Vec<F>>,
    contextual: HashMap<Vec<Option<u32>>, Vec<Vec<F>>>,
}

fn normalize_rows<F: Scalar>(tables: &mut [Vec<F>]) {
    for row in tables {
        let sum: F = row.iter().copied().sum();
        assert!(sum > F::zero(), "table row must have positive mass");
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

impl<F: Scalar> FrozenTablePredictor<F> {
    /// One table per position, identical for every decoding context.
    pub fn context_free(mut tables: Vec<Vec<F>>) -> Self {
        normalize_rows(&mut tables);
        let slot_sizes = tables.iter().map(|t| t.len()).collect();
        FrozenTablePredictor {
            slot_sizes,
            base: tables,
            contextual: HashMap::new(),
        }
    }

    /// Add a full table set that applies when the partial target equals
    /// `state` exactly.
    pub fn with_override(mut self, state: Vec<Option<u32>>, mut tables: Vec<Vec<F>>) -> Self {
        normalize_rows(&mut tables);
        assert_eq!(tables.len(), self.slot_sizes.len());
        self.contextual.insert(state, tables);
        self
    }

    /// Random strictly-positive context-free tables.
    pub fn random(slot_sizes: &[usize], rng: &mut impl Rng) -> Self {
        let tables = slot_sizes
            .iter()
            .map(|&v| {
                (0..v)
                    .map(|_| F::from_f64(rng.gen::<f64>() + 0.05))
                    .collect()
            })
            .collect();
        Self::context_free(tables)
    }

    /// Random tables where every reachable partial state gets its own
    /// distribution, making best-path scores order-dependent.
    pub fn random_contextual(slot_sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut p = Self::random(slot_sizes, rng);
        let states = enumerate_partial_states(slot_sizes);
        for state in states {
            let tables = slot_sizes
                .iter()
                .map(|&v| {
                    (0..v)
                        .map(|_| F::from_f64(rng.gen::<f64>() + 0.05))
                        .collect()
                })
                .collect();
            let mut t: Vec<Vec<F>> = tables;
            normalize_rows(&mut t);
            p.contextual.insert(state, t);
        }
        p
    }
}

/// All partial states with at least one decoded and one masked position.
fn enumerate_partial_states(slot_sizes: &[usize]) -> Vec<Vec<Option<u32>>> {
    let n = slot_sizes.len();
    let mut out = Vec::new();
    let mut state: Vec<Option<u32>> = vec![None; n];
    fn rec(
        slot_sizes: &[usize],
        pos: usize,
        state: &mut Vec<Option<u32>>,
        out: &mut Vec<Vec<Option<u32>>>,
    ) {
        if pos == slot_sizes.len() {
            let decoded = state.iter().filter(|s| s.is_some()).count();
            if decoded > 0 && decoded < slot_sizes.len() {
                out.push(state.clone());
            }
            return;
        }
        state[pos] = None;
        rec(slot_sizes, pos + 1, state, out);
        for v in 0..slot_sizes[pos] as u32 {
            state[pos] = Some(v);
            rec(slot_sizes, pos + 1, state, out);
        }
        state[pos] = None;
    }
    rec(slot_sizes, 0, &mut state, &mut out);
    out
}

impl<F: Scalar> MaskPredictor<F> for FrozenTablePredictor<F> {
    fn slot_sizes(&self) -> Vec<usize> {
        self.slot_sizes.clone()
    }

    fn predict(&self, _history: &[u32], target: &[Option<u32>]) -> Vec<Option<Vec<F>>> {
        let tables = self.contextual.get(target).unwrap_or(&self.base);
        target
            .iter()
            .enumerate()
            .map(|(j, tok)| match tok {
                Some(_) => None,
                None => Some(tables[j].clone()),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_normalized_and_filled_positions_skipped() {
        let p: FrozenTablePredictor<f64> =
            FrozenTablePredictor::context_free(vec![vec![7.0, 2.0, 1.0], vec![1.0, 1.0]]);
        let dists = p.predict(&[], &[None, Some(0)]);
        let d0 = dists[0].as_ref().unwrap();
        assert!((d0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d0[0] - 0.7).abs() < 1e-12);
        assert!(dists[1].is_none());
    }

    #[test]
    fn contextual_override_applies() {
        let p: FrozenTablePredictor<f64> =
            FrozenTablePredictor::context_free(vec![vec![1.0, 1.0], vec![1.0, 1.0]])
                .with_override(
                    vec![Some(1), None],
                    vec![vec![1.0, 1.0], vec![9.0, 1.0]],
                );
        let dists = p.predict(&[], &[Some(1), None]);
        assert!((dists[1].as_ref().unwrap()[0] - 0.9).abs() < 1e-12);
        let base = p.predict(&[], &[Some(0), None]);
        assert!((base[1].as_ref().unwrap()[0] - 0.5).abs() < 1e-12);
    }
}
