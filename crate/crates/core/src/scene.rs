//! Synthetic ground-truth scenes: stochastic room impulse responses,
//! reverberant and noisy mixtures at a target SNR, speech-like sources, and
//! spectrograms that follow the delayed linear-prediction model exactly.

use std::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

/// Early/late boundary used by [`make_rir`], in seconds.
pub const EARLY_DURATION: f64 = 0.05;

/// Multichannel room impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<Vec<f64>>,
    pub sample_rate: u32,
    /// Number of leading taps counted as direct path plus early reflections.
    pub early_len: usize,
}

impl Rir {
    pub fn new(taps: Vec<Vec<f64>>, sample_rate: u32, early_len: usize) -> Result<Self> {
        let len = taps.first().map_or(0, Vec::len);
        if len == 0 || taps.iter().any(|t| t.len() != len) {
            return Err(Error::shape("rir channels must share a non-zero length"));
        }
        if early_len > len {
            return Err(Error::value(format!("early length {early_len} exceeds rir length {len}")));
        }
        if taps.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::value("rir taps must be finite"));
        }
        Ok(Rir { taps, sample_rate, early_len })
    }

    pub fn channels(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Energy envelope `exp(-3 ln(10) t / rt60)` shared by all channels.
    pub fn envelope(rt60: f64, t: f64) -> f64 {
        (-3.0 * LN_10 * t / rt60).exp()
    }
}

/// Exponentially decaying Gaussian noise with a unit direct-path tap, at 16 kHz.
pub fn make_rir(rt60: f64, length: usize, channels: usize, seed: u64) -> Result<Rir> {
    make_rir_at(rt60, length, channels, seed, DEFAULT_SAMPLE_RATE)
}

pub fn make_rir_at(
    rt60: f64,
    length: usize,
    channels: usize,
    seed: u64,
    sample_rate: u32,
) -> Result<Rir> {
    if !(rt60 > 0.0) || !rt60.is_finite() {
        return Err(Error::value(format!("rt60 must be positive, got {rt60}")));
    }
    if length == 0 || channels == 0 {
        return Err(Error::value("rir length and channel count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let taps = (0..channels)
        .map(|_| {
            let mut t: Vec<f64> = (0..length)
                .map(|i| {
                    let g: f64 = rng.sample(StandardNormal);
                    g * Rir::envelope(rt60, i as f64 / fs)
                })
                .collect();
            t[0] = 1.0;
            t
        })
        .collect();
    let early_len = ((EARLY_DURATION * fs).round() as usize).clamp(1, length);
    Rir::new(taps, sample_rate, early_len)
}

/// Linear convolution via zero-padded FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            for (j, &h) in b.iter().enumerate() {
                out[i + j] += x * h;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Source of additive noise for [`render_scene`].
pub trait NoiseSource {
    fn generate(&mut self, channels: usize, len: usize, sample_rate: u32) -> Result<Waveform>;
}

/// Independent white Gaussian noise per channel.
#[derive(Debug, Clone)]
pub struct WhiteNoise {
    rng: ChaCha8Rng,
}

impl WhiteNoise {
    pub fn new(seed: u64) -> Self {
        WhiteNoise { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl NoiseSource for WhiteNoise {
    fn generate(&mut self, channels: usize, len: usize, sample_rate: u32) -> Result<Waveform> {
        let chans = (0..channels)
            .map(|_| (0..len).map(|_| self.rng.sample(StandardNormal)).collect())
            .collect();
        Waveform::new(chans, sample_rate)
    }
}

/// White noise through a one-pole lowpass `y[n] = a·y[n-1] + x[n]`.
#[derive(Debug, Clone)]
pub struct ColoredNoise {
    white: WhiteNoise,
    pole: f64,
}

impl ColoredNoise {
    pub fn new(seed: u64, pole: f64) -> Result<Self> {
        if !(pole.abs() < 1.0) {
            return Err(Error::value(format!("pole {pole} must lie inside the unit circle")));
        }
        Ok(ColoredNoise { white: WhiteNoise::new(seed), pole })
    }
}

impl NoiseSource for ColoredNoise {
    fn generate(&mut self, channels: usize, len: usize, sample_rate: u32) -> Result<Waveform> {
        let white = self.white.generate(channels, len, sample_rate)?;
        let chans = white
            .into_channels()
            .into_iter()
            .map(|x| {
                let mut y = 0.0;
                x.into_iter()
                    .map(|v| {
                        y = self.pole * y + v;
                        y
                    })
                    .collect()
            })
            .collect();
        Waveform::new(chans, sample_rate)
    }
}

/// Clean (direct + early), reverberant (noise-free) and noisy mixture
/// renderings of one source, all of the same shape.
#[derive(Debug, Clone)]
pub struct SceneTriple {
    pub clean: Waveform,
    pub reverberant: Waveform,
    pub mixture: Waveform,
    pub snr_db: f64,
    pub seed: u64,
}

/// Mixture power ratio `10 log10(P_signal / P_noise)` over whole signals.
pub fn measured_snr_db(signal: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (signal.power() / noise.power()).log10()
}

/// Convolves `src` with every RIR channel and adds `noise` scaled to `snr_db`
/// relative to the reverberant signal. `snr_db = +∞` disables noise.
///
/// All outputs have length `src.len() + rir.len() - 1`; shorter noise is looped.
pub fn render_scene(src: &Waveform, rir: &Rir, noise: &Waveform, snr_db: f64) -> Result<SceneTriple> {
    if src.is_empty() {
        return Err(Error::Empty("scene source has no samples"));
    }
    if src.num_channels() != 1 {
        return Err(Error::shape("scene source must be mono"));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::value(format!("invalid snr {snr_db}")));
    }
    let x = src.channel(0);
    let len = x.len() + rir.len() - 1;
    let rate = src.sample_rate();

    let mut reverberant = Vec::with_capacity(rir.channels());
    let mut clean = Vec::with_capacity(rir.channels());
    for taps in &rir.taps {
        reverberant.push(convolve(x, taps));
        let mut early = convolve(x, &taps[..rir.early_len]);
        early.resize(len, 0.0);
        clean.push(early);
    }
    let reverberant = Waveform::new(reverberant, rate)?;
    let clean = Waveform::new(clean, rate)?;

    let mixture = if snr_db == f64::INFINITY {
        reverberant.clone()
    } else {
        if noise.num_channels() != rir.channels() {
            return Err(Error::shape(format!(
                "noise has {} channels, rir has {}",
                noise.num_channels(),
                rir.channels()
            )));
        }
        if noise.is_empty() {
            return Err(Error::Empty("noise has no samples"));
        }
        let looped: Vec<Vec<f64>> = noise
            .channels()
            .iter()
            .map(|c| c.iter().copied().cycle().take(len).collect())
            .collect();
        let looped = Waveform::new(looped, rate)?;
        let p_noise = looped.power();
        if !(p_noise > 0.0) {
            return Err(Error::value("noise has zero power but a finite snr was requested"));
        }
        let gain = (reverberant.power() / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        let mixed = reverberant
            .channels()
            .iter()
            .zip(looped.channels())
            .map(|(r, n)| r.iter().zip(n).map(|(a, b)| a + gain * b).collect())
            .collect();
        Waveform::new(mixed, rate)?
    };
    Ok(SceneTriple { clean, reverberant, mixture, snr_db, seed: 0 })
}

/// Builds a multichannel spectrogram whose first channel satisfies
/// `x¹[n,k] = d[n,k] + g_kᴴ x̄[n-D,k]` exactly, with zero context before the
/// first frame. Channels 2..M, if any, are taken verbatim from `others`.
pub fn make_mclp_scene(
    desired: &Spectrogram,
    others: Option<&Spectrogram>,
    weights: &[Vec<Complex64>],
    delay: usize,
    order: usize,
) -> Result<Spectrogram> {
    if delay < 1 {
        return Err(Error::config("prediction delay must be at least 1"));
    }
    if order < 1 {
        return Err(Error::config("prediction order must be at least 1"));
    }
    if desired.channels() != 1 {
        return Err(Error::shape("desired spectrogram must be single-channel"));
    }
    let channels = 1 + others.map_or(0, Spectrogram::channels);
    if let Some(o) = others {
        if o.frames() != desired.frames() || o.bins() != desired.bins() {
            return Err(Error::shape("extra channels must match the desired spectrogram"));
        }
    }
    if weights.len() != desired.bins() {
        return Err(Error::shape(format!(
            "{} weight vectors for {} bins",
            weights.len(),
            desired.bins()
        )));
    }
    if let Some(g) = weights.iter().find(|g| g.len() != channels * order) {
        return Err(Error::shape(format!(
            "weight vector length {} != {channels}x{order}",
            g.len()
        )));
    }
    let mut x = Spectrogram::zeros(desired.frames(), channels, desired.config().clone())
        .with_signal_len(desired.signal_len());
    for n in 0..desired.frames() {
        for k in 0..desired.bins() {
            for m in 1..channels {
                let v = others.expect("channels > 1").get(n, k, m - 1);
                x.set(n, k, m, v);
            }
        }
    }
    for n in 0..desired.frames() {
        for (k, g) in weights.iter().enumerate() {
            let mut pred = Complex64::new(0.0, 0.0);
            for m in 0..channels {
                for l in 0..order {
                    let lag = delay + l;
                    if n >= lag {
                        pred += g[m * order + l].conj() * x.get(n - lag, k, m);
                    }
                }
            }
            x.set(n, k, 0, desired.get(n, k, 0) + pred);
        }
    }
    Ok(x)
}

/// Speech-like test signal: harmonic syllables with gliding pitch and
/// formant shaping, fricative bursts, and pauses. Peak amplitude 0.5.
pub fn synth_speech(duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration_secs > 0.0) {
        return Err(Error::value("duration must be positive"));
    }
    let fs = sample_rate as f64;
    let len = (duration_secs * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.02..0.1) * fs) as usize;
    while pos < len {
        let seg = (rng.random_range(0.12..0.35) * fs) as usize;
        let end = (pos + seg).min(len);
        let seg_len = end - pos;
        if rng.random_bool(0.8) {
            let f0_start = rng.random_range(90.0..230.0);
            let f0_end = f0_start * rng.random_range(0.8..1.25);
            let f1: f64 = rng.random_range(300.0..900.0);
            let f2: f64 = rng.random_range(900.0..2500.0);
            let level = rng.random_range(0.4..1.0);
            let mut phase = 0.0;
            let nyq = fs / 2.0;
            for i in 0..seg_len {
                let u = i as f64 / seg_len as f64;
                let f0 = f0_start + (f0_end - f0_start) * u;
                phase += 2.0 * PI * f0 / fs;
                let env = (PI * u).sin().powf(0.6);
                let mut s = 0.0;
                let mut h = 1.0;
                while h * f0 < 4000.0_f64.min(nyq * 0.95) {
                    let f = h * f0;
                    let formant = (-((f - f1) / 150.0).powi(2)).exp()
                        + 0.7 * (-((f - f2) / 250.0).powi(2)).exp()
                        + 0.05;
                    s += formant / h.sqrt() * (h * phase).sin();
                    h += 1.0;
                }
                out[pos + i] += level * env * s;
            }
        } else {
            let level = rng.random_range(0.05..0.2);
            let mut prev: f64 = 0.0;
            for i in 0..seg_len {
                let u = i as f64 / seg_len as f64;
                let w: f64 = rng.sample(StandardNormal);
                out[pos + i] += level * (PI * u).sin() * (w - prev);
                prev = w;
            }
        }
        pos = end + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::mono(out, sample_rate)
}
