//! Mask predictors and the masked-reconstruction training objective.
//!
//! A target item is a length-N token sequence; training masks each token
//! independently with probability `t ~ U[p_mask, 1]` and minimizes the
//! cross-entropy of the true tokens at masked positions, weighted by `1/t`.

mod denoiser;
mod frozen;
mod train;

pub use denoiser::{DenoiserConfig, TinyDenoiser};
pub use frozen::FrozenTablePredictor;
pub use train::{grad_check, train, Checkpoint, TrainConfig, TrainReport, TrainingData};

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("p_mask must lie in [0, 1), got {0}")]
    InvalidPMask(f64),
    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint vocabulary hash {found} does not match expected {expected}")]
    VocabHashMismatch { expected: String, found: String },
    #[error("checkpoint i/o: {0}")]
    Io(String),
}

/// A partially masked target sequence; `None` marks the mask token.
/// Token values are slot-local vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTarget {
    pub tokens: Vec<Option<u32>>,
    /// Masking probability actually used to produce this sequence.
    pub t: f64,
}

/// Scores masked positions of a partially decoded target.
///
/// `history` is the user context as global token ids. The returned vector
/// has one entry per target position: `Some(distribution over the slot
/// vocabulary)` where the position is masked, `None` where it is filled.
pub trait MaskPredictor<F: Scalar> {
    fn slot_sizes(&self) -> Vec<usize>;
    fn predict(&self, history: &[u32], target: &[Option<u32>]) -> Vec<Option<Vec<F>>>;
}

/// Draw the masking probability `t` uniformly from `[p_mask, 1]`.
pub fn sample_t(p_mask: f64, rng: &mut impl Rng) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&p_mask) {
        return Err(ModelError::InvalidPMask(p_mask));
    }
    loop {
        let t = p_mask + (1.0 - p_mask) * rng.gen::<f64>();
        if t > 0.0 {
            return Ok(t);
        }
    }
}

/// Independently mask each token of `y0` with probability `t`.
pub fn mask_target(y0: &[u32], t: f64, rng: &mut impl Rng) -> MaskedTarget {
    let tokens = y0
        .iter()
        .map(|&tok| if rng.gen::<f64>() < t { None } else { Some(tok) })
        .collect();
    MaskedTarget { tokens, t }
}

/// Masked cross-entropy for one instance: `(1/t) * sum_{masked j} -ln
/// pi(y0[j])`. Instances with no masked position contribute zero.
pub fn instance_loss<F: Scalar>(
    predictor: &dyn MaskPredictor<F>,
    history: &[u32],
    y0: &[u32],
    masked: &MaskedTarget,
) -> F {
    let dists = predictor.predict(history, &masked.tokens);
    let mut sum = F::zero();
    let mut any = false;
    for (j, dist) in dists.iter().enumerate() {
        if masked.tokens[j].is_none() {
            let dist = dist.as_ref().expect("masked position must be scored");
            sum = sum - dist[y0[j] as usize].ln();
            any = true;
        }
    }
    if !any {
        return F::zero();
    }
    sum / F::from_f64(masked.t)
}

/// Mean instance loss over a batch of already-masked instances.
pub fn batch_loss<F: Scalar>(
    predictor: &dyn MaskPredictor<F>,
    batch: &[(Vec<u32>, Vec<u32>, MaskedTarget)],
) -> F {
    if batch.is_empty() {
        return F::zero();
    }
    let total: F = batch
        .iter()
        .map(|(h, y0, m)| instance_loss(predictor, h, y0, m))
        .sum();
    total / F::from_usize(batch.len())
}
