//! Complex STFT tensor indexed by (frame, bin, channel).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::StftConfig;

/// Row-major (frames × bins × channels) complex tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    signal_len: Option<usize>,
}

impl Spectrogram {
    pub fn new(
        frames: usize,
        bins: usize,
        channels: usize,
        data: Vec<Complex64>,
        config: StftConfig,
    ) -> Result<Self> {
        if channels == 0 || bins == 0 {
            return Err(Error::shape("spectrogram needs at least one bin and one channel"));
        }
        if data.len() != frames * bins * channels {
            return Err(Error::shape(format!(
                "data length {} != {frames}x{bins}x{channels}",
                data.len()
            )));
        }
        if bins != config.bins() {
            return Err(Error::shape(format!(
                "{bins} bins incompatible with dft length {}",
                config.dft_len
            )));
        }
        Ok(Spectrogram { frames, bins, channels, data, config, signal_len: None })
    }

    pub fn zeros(frames: usize, channels: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Spectrogram {
            frames,
            bins,
            channels,
            data: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
            config,
            signal_len: None,
        }
    }

    /// Builds an (N × K × M) tensor by evaluating `f(n, k, m)`.
    pub fn from_fn(
        frames: usize,
        channels: usize,
        config: StftConfig,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let bins = config.bins();
        let mut data = Vec::with_capacity(frames * bins * channels);
        for n in 0..frames {
            for k in 0..bins {
                for m in 0..channels {
                    data.push(f(n, k, m));
                }
            }
        }
        Spectrogram { frames, bins, channels, data, config, signal_len: None }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.bins, self.channels)
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Length of the time signal this spectrogram was analyzed from, if known.
    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn with_signal_len(mut self, len: Option<usize>) -> Self {
        self.signal_len = len;
        self
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, k: usize, m: usize) -> usize {
        (n * self.bins + k) * self.channels + m
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize, m: usize) -> Complex64 {
        self.data[self.index(n, k, m)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, k: usize, m: usize, v: Complex64) {
        let i = self.index(n, k, m);
        self.data[i] = v;
    }

    /// Frame sequence of one bin and channel.
    pub fn bin_series(&self, k: usize, m: usize) -> Vec<Complex64> {
        (0..self.frames).map(|n| self.get(n, k, m)).collect()
    }

    pub fn channel(&self, m: usize) -> Spectrogram {
        Spectrogram::from_fn(self.frames, 1, self.config.clone(), |n, k, _| self.get(n, k, m))
            .with_signal_len(self.signal_len)
    }

    /// Stacks single-channel spectrograms into one multichannel tensor.
    pub fn stack(parts: &[Spectrogram]) -> Result<Spectrogram> {
        let first = parts.first().ok_or(Error::Empty("no spectrograms to stack"))?;
        let mut offsets = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            if p.frames != first.frames || p.bins != first.bins {
                return Err(Error::shape("stacked spectrograms differ in frames or bins"));
            }
            offsets.push(total);
            total += p.channels;
        }
        let mut out = Spectrogram::zeros(first.frames, total, first.config.clone());
        for (p, &off) in parts.iter().zip(&offsets) {
            for n in 0..p.frames {
                for k in 0..p.bins {
                    for m in 0..p.channels {
                        out.set(n, k, off + m, p.get(n, k, m));
                    }
                }
            }
        }
        Ok(out.with_signal_len(first.signal_len))
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn scale(&self, a: Complex64) -> Spectrogram {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c *= a);
        out
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Spectrogram) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
