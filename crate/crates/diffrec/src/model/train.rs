//! SGD training for the denoiser, finite-difference gradient checking, and
//! checkpoint save/load.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::denoiser::{DenoiserConfig, TinyDenoiser};
use super::{instance_loss, mask_target, sample_t, MaskedTarget, ModelError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Lower bound of the masking-probability distribution U[p_mask, 1].
    pub p_mask: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 16,
            p_mask: 0.6,
            seed: 0,
        }
    }
}

/// Tokenized instances: (history as global token ids, target slot-local ids).
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub train: Vec<(Vec<u32>, Vec<u32>)>,
    pub validation: Vec<(Vec<u32>, Vec<u32>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
}

/// Train with plain SGD. One fresh `t` is sampled per instance per epoch so
/// mask patterns vary across epochs; everything is driven by `cfg.seed`.
pub fn train<F: Scalar>(
    model: &mut TinyDenoiser<F>,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        train_losses: Vec::new(),
        validation_losses: Vec::new(),
    };
    let lr = F::from_f64(cfg.lr);
    let mut grads = model.zero_grads();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Vec<u32>, Vec<u32>, MaskedTarget)> = chunk
                .iter()
                .map(|&i| {
                    let (h, y0) = &data.train[i];
                    let t = sample_t(cfg.p_mask, &mut rng)?;
                    Ok((h.clone(), y0.clone(), mask_target(y0, t, &mut rng)))
                })
                .collect::<Result<_, ModelError>>()?;
            grads.zero_out();
            let loss = model.loss_and_grad(&batch, &mut grads);
            if !loss.to_f64().is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            model.sgd_step(&grads, lr);
            epoch_loss += loss.to_f64();
            n_batches += 1;
        }
        report
            .train_losses
            .push(epoch_loss / n_batches.max(1) as f64);

        // Fixed per-epoch rng so the validation loss is comparable across
        // runs with the same seed.
        let mut vrng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_add(0x9e37));
        let mut vloss = 0.0;
        for (h, y0) in &data.validation {
            let t = sample_t(cfg.p_mask, &mut vrng)?;
            let masked = mask_target(y0, t, &mut vrng);
            vloss += instance_loss(model, h, y0, &masked).to_f64();
        }
        report
            .validation_losses
            .push(vloss / data.validation.len().max(1) as f64);
    }
    Ok(report)
}

/// Central finite differences against analytic gradients on one instance.
/// Returns the max relative error over `n_samples` random parameters.
pub fn grad_check<F: Scalar>(
    model: &mut TinyDenoiser<F>,
    history: &[u32],
    y0: &[u32],
    masked: &MaskedTarget,
    epsilon: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut grads = model.zero_grads();
    let batch = vec![(history.to_vec(), y0.to_vec(), masked.clone())];
    model.loss_and_grad(&batch, &mut grads);
    let n = model.params.n_params();
    let eps = F::from_f64(epsilon);
    let mut max_rel = 0.0f64;
    for _ in 0..n_samples {
        let idx = rng.gen_range(0..n);
        let analytic = grads.get_flat(idx).to_f64();
        model.params.add_flat(idx, eps);
        let plus = instance_loss(&*model, history, y0, masked).to_f64();
        model.params.add_flat(idx, -(eps + eps));
        let minus = instance_loss(&*model, history, y0, masked).to_f64();
        model.params.add_flat(idx, eps);
        let fd = (plus - minus) / (2.0 * epsilon);
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        let rel = (analytic - fd).abs() / denom;
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub schema_version: u32,
    pub config: DenoiserConfig,
    pub train_config: TrainConfig,
    pub vocab_hash: String,
    pub model: TinyDenoiser<F>,
}

impl<F: Scalar + Serialize + DeserializeOwned> Checkpoint<F> {
    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let json = serde_json::to_string(self).map_err(|e| ModelError::Io(e.to_string()))?;
        crate::write_atomic(path, json.as_bytes()).map_err(|e| ModelError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path, expected_vocab_hash: &str) -> Result<Self, ModelError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        let ckpt: Checkpoint<F> =
            serde_json::from_str(&raw).map_err(|e| ModelError::Io(e.to_string()))?;
        if ckpt.vocab_hash != expected_vocab_hash {
            return Err(ModelError::VocabHashMismatch {
                expected: expected_vocab_hash.to_string(),
                found: ckpt.vocab_hash,
            });
        }
        Ok(ckpt)
    }
}
