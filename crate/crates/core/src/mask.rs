//! Ideal ratio masks and their application to mixture spectra.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

pub const DEFAULT_MASK_EPSILON: f64 = 1e-8;

/// Denominator guard of the ratio mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskEpsilon(f64);

impl MaskEpsilon {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::value(format!("mask epsilon must be positive, got {eps}")));
        }
        Ok(MaskEpsilon(eps))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for MaskEpsilon {
    fn default() -> Self {
        MaskEpsilon(DEFAULT_MASK_EPSILON)
    }
}

/// Real (frames × bins × channels) tensor with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(frames: usize, bins: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins * channels {
            return Err(Error::shape(format!(
                "mask data length {} != {frames}x{bins}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::value(format!("mask entries must lie in [0, 1], got {v}")));
        }
        Ok(Mask { frames, bins, channels, data })
    }

    pub fn filled(frames: usize, bins: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(frames, bins, channels, vec![value; frames * bins * channels])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.bins, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize, m: usize) -> f64 {
        self.data[(n * self.bins + k) * self.channels + m]
    }

    pub fn channel(&self, m: usize) -> Mask {
        let data = (0..self.frames * self.bins)
            .map(|i| self.data[i * self.channels + m])
            .collect();
        Mask { frames: self.frames, bins: self.bins, channels: 1, data }
    }

    /// Interleaves single-channel masks into one multichannel mask.
    pub fn stack(parts: &[Mask]) -> Result<Mask> {
        let first = parts.first().ok_or(Error::Empty("no masks to stack"))?;
        if parts.iter().any(|p| p.channels != 1 || p.frames != first.frames || p.bins != first.bins) {
            return Err(Error::shape("stacked masks must be single-channel and equally sized"));
        }
        let cells = first.frames * first.bins;
        let mut data = Vec::with_capacity(cells * parts.len());
        for i in 0..cells {
            data.extend(parts.iter().map(|p| p.data[i]));
        }
        Ok(Mask { frames: first.frames, bins: first.bins, channels: parts.len(), data })
    }

    /// Entrywise product of two masks.
    pub fn product(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::shape("mask shapes differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Mask { data, ..*self })
    }
}

/// Entrywise `min(target / (mixture + eps), 1)`.
pub fn compute_irm(
    target_mag: &[f64],
    mixture_mag: &[f64],
    shape: (usize, usize, usize),
    eps: MaskEpsilon,
) -> Result<Mask> {
    if target_mag.len() != mixture_mag.len() {
        return Err(Error::shape("target and mixture magnitudes differ in size"));
    }
    if let Some(v) = target_mag.iter().chain(mixture_mag).find(|v| !(**v >= 0.0)) {
        return Err(Error::value(format!("magnitudes must be non-negative, got {v}")));
    }
    let data = target_mag
        .iter()
        .zip(mixture_mag)
        .map(|(t, x)| (t / (x + eps.get())).min(1.0))
        .collect();
    let (n, k, m) = shape;
    Mask::new(n, k, m, data)
}

/// Ratio mask of `|target|` over `|mixture|`.
pub fn irm_from_spectrograms(
    target: &Spectrogram,
    mixture: &Spectrogram,
    eps: MaskEpsilon,
) -> Result<Mask> {
    if !target.same_shape(mixture) {
        return Err(Error::shape(format!(
            "target {:?} vs mixture {:?}",
            target.shape(),
            mixture.shape()
        )));
    }
    compute_irm(&target.magnitudes(), &mixture.magnitudes(), mixture.shape(), eps)
}

/// Scales every complex entry by its real mask value, so magnitudes shrink
/// and the mixture phase is kept.
pub fn apply_mask(spec: &Spectrogram, mask: &Mask) -> Result<Spectrogram> {
    if spec.shape() != mask.shape() {
        return Err(Error::shape(format!(
            "spectrogram {:?} vs mask {:?}",
            spec.shape(),
            mask.shape()
        )));
    }
    let mut out = spec.clone();
    for (c, &w) in out.data_mut().iter_mut().zip(&mask.data) {
        *c = Complex64::new(c.re * w, c.im * w);
    }
    Ok(out)
}
