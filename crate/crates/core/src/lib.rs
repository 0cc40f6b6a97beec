//! Multichannel speech dereverberation and denoising built around weighted
//! prediction error (WPE) linear prediction in the STFT domain.
//!
//! The crate provides the iterative WPE baseline, a one-shot variant that takes
//! its spectral variance from a mask-estimating network, the network itself,
//! a synthetic scene generator used as ground truth, and objective metrics.

pub mod audio;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod scene;
pub mod spectrogram;
pub mod stft;
pub mod tensor_io;
pub mod wpe;

pub use audio::Waveform;
pub use error::{Error, Result};
pub use mask::{Mask, MaskEpsilon};
pub use mlp::{MlpModel, TrainConfig};
pub use pipeline::{EnhanceMode, Enhancer};
pub use spectrogram::Spectrogram;
pub use stft::StftConfig;
pub use wpe::{RegressionWeights, VarianceMap, WpeConfig};

pub use num_complex::Complex64;
