//! Coarse-to-fine generative recommendation over hierarchical category
//! codes and semantic IDs: masked-denoiser training plus diffusion beam
//! search decoding, with a brute-force oracle and evaluation metrics.

pub mod dataset;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod taxonomy;
pub mod tokenizer;

pub use scalar::Scalar;

/// Double-precision denoiser, the default for training and decoding.
pub type TinyDenoiser = model::TinyDenoiser<f64>;
/// Single-precision denoiser for memory-constrained runs.
pub type TinyDenoiser32 = model::TinyDenoiser<f32>;
/// Double-precision beam hypothesis.
pub type Beam = decoding::Beam<f64>;
/// Double-precision beam-search result.
pub type GenerateResult = decoding::GenerateResult<f64>;

/// Write a file via a temporary sibling and rename, so partially written
/// artifacts are never observed.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
