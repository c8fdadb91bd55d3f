//! Frequency-filtered multimodal cross-attention fusion for registered
//! RGB/IR image pairs.
//!
//! The pipeline has two stages. [`freq_filter`] removes low-salience
//! spectral content from each modality and blends the result with the raw
//! signal through a learnable coefficient. [`mcaf`] then extracts Inception
//! features per modality, exchanges information through windowed
//! cross-attention, weighs the modalities with a jointly normalised local
//! attention map, fuses them and applies a sigmoid-gated global residual
//! before projecting to a 3-channel image.
//!
//! Everything runs on the small NCHW kernel in [`tensor`] and the 2D DFT in
//! [`fft`]; there is no external math framework.

pub mod config;
pub mod error;
pub mod fft;
pub mod freq_filter;
pub mod gradcheck;
pub mod imageio;
pub mod mcaf;
pub mod pipeline;
pub mod tensor;
pub mod weights;

pub use config::FusionConfig;
pub use error::{Error, Result};
pub use pipeline::{Ablation, FusionParams, Pipeline};
pub use tensor::{Rng, Tensor4};
