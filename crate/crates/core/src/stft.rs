//! Short-time Fourier analysis and weighted overlap-add synthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/L)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rect",
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rect" | "rectangular" => Ok(Window::Rectangular),
            other => Err(Error::config(format!("unknown window {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub dft_len: usize,
    pub window: Window,
    /// Required input rate; `None` accepts any rate.
    pub sample_rate: Option<u32>,
    /// Zero-pad a trailing partial frame instead of dropping it.
    pub pad_tail: bool,
}

impl Default for StftConfig {
    /// 50 ms frames with 80% overlap and an 800-point DFT at 16 kHz.
    fn default() -> Self {
        StftConfig {
            frame_len: 800,
            hop: 160,
            dft_len: 800,
            window: Window::Hann,
            sample_rate: Some(DEFAULT_SAMPLE_RATE),
            pad_tail: true,
        }
    }
}

impl StftConfig {
    /// Hann-windowed config accepting any sample rate.
    pub fn new(frame_len: usize, hop: usize, dft_len: usize) -> Result<Self> {
        let cfg = StftConfig {
            frame_len,
            hop,
            dft_len,
            window: Window::Hann,
            sample_rate: None,
            pad_tail: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(Error::config("frame length and hop must be positive"));
        }
        if self.frame_len % self.hop != 0 {
            return Err(Error::config(format!(
                "hop {} does not divide frame length {}",
                self.hop, self.frame_len
            )));
        }
        if self.dft_len < self.frame_len {
            return Err(Error::config(format!(
                "dft length {} shorter than frame length {}",
                self.dft_len, self.frame_len
            )));
        }
        Ok(())
    }

    /// One-sided bin count `dft_len/2 + 1`.
    pub fn bins(&self) -> usize {
        self.dft_len / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.frame_len {
            return 1;
        }
        let rest = len - self.frame_len;
        if self.pad_tail {
            1 + rest.div_ceil(self.hop)
        } else {
            1 + rest / self.hop
        }
    }
}

struct Plan {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Plan {
    fn forward(cfg: &StftConfig) -> Self {
        Plan {
            window: cfg.window.coefficients(cfg.frame_len),
            fft: FftPlanner::new().plan_fft_forward(cfg.dft_len),
        }
    }

    fn inverse(cfg: &StftConfig) -> Self {
        Plan {
            window: cfg.window.coefficients(cfg.frame_len),
            fft: FftPlanner::new().plan_fft_inverse(cfg.dft_len),
        }
    }
}

pub fn analyze(wav: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if wav.is_empty() {
        return Err(Error::Empty("waveform has no samples"));
    }
    if let Some(rate) = cfg.sample_rate {
        if rate != wav.sample_rate() {
            return Err(Error::config(format!(
                "input is {} Hz but the STFT expects {rate} Hz; override the frame length to process other rates",
                wav.sample_rate()
            )));
        }
    }
    if wav.len() < cfg.frame_len && !cfg.pad_tail {
        return Err(Error::Value(format!(
            "waveform of {} samples is shorter than one frame ({})",
            wav.len(),
            cfg.frame_len
        )));
    }
    let plan = Plan::forward(cfg);
    let frames = cfg.num_frames(wav.len());
    let bins = cfg.bins();
    let channels = wav.num_channels();
    let mut out = Spectrogram::zeros(frames, channels, cfg.clone());
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.dft_len];
    for m in 0..channels {
        let x = wav.channel(m);
        for n in 0..frames {
            let start = n * cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (i, w) in plan.window.iter().enumerate() {
                if let Some(&s) = x.get(start + i) {
                    buf[i].re = s * w;
                }
            }
            plan.fft.process(&mut buf);
            for k in 0..bins {
                out.set(n, k, m, buf[k]);
            }
        }
    }
    Ok(out.with_signal_len(Some(wav.len())))
}

/// Inverse STFT by weighted overlap-add, normalized by the summed squared
/// window. Output length is the recorded signal length when known.
pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig, sample_rate: u32) -> Result<Waveform> {
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins but config implies {}",
            spec.bins(),
            cfg.bins()
        )));
    }
    let plan = Plan::inverse(cfg);
    let frames = spec.frames();
    let span = if frames == 0 { 0 } else { (frames - 1) * cfg.hop + cfg.frame_len };
    let out_len = spec.signal_len().unwrap_or(span);

    let mut wsum = vec![0.0; span];
    for n in 0..frames {
        for (i, w) in plan.window.iter().enumerate() {
            wsum[n * cfg.hop + i] += w * w;
        }
    }
    let peak = wsum.iter().copied().fold(0.0, f64::max);
    let threshold = peak * 1e-10;

    let bins = cfg.bins();
    let scale = 1.0 / cfg.dft_len as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.dft_len];
    let mut channels = Vec::with_capacity(spec.channels());
    for m in 0..spec.channels() {
        let mut acc = vec![0.0; span];
        for n in 0..frames {
            for k in 0..bins {
                buf[k] = spec.get(n, k, m);
            }
            for k in bins..cfg.dft_len {
                buf[k] = buf[cfg.dft_len - k].conj();
            }
            plan.fft.process(&mut buf);
            let start = n * cfg.hop;
            for (i, w) in plan.window.iter().enumerate() {
                acc[start + i] += buf[i].re * scale * w;
            }
        }
        let mut y: Vec<f64> = acc
            .iter()
            .zip(&wsum)
            .map(|(&a, &s)| if s > threshold { a / s } else { 0.0 })
            .collect();
        y.resize(out_len, 0.0);
        channels.push(y);
    }
    Waveform::new(channels, sample_rate)
}
