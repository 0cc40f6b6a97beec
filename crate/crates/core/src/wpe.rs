//! Weighted prediction error dereverberation.
//!
//! Per frequency bin `k`, channel 1 is modeled as the desired signal plus a
//! delayed multichannel linear prediction:
//!
//! ```text
//! x¹[n,k] = d[n,k] + g_kᴴ x̄[n-D,k]
//! ```
//!
//! where `x̄[n-D,k]` stacks frames `n-D .. n-D-L+1` of every channel. Given a
//! variance map `σ²[n,k]` the weights solve the weighted normal equations
//! `(Σ x̄ x̄ᴴ/σ²) g = Σ x̄ (x¹)*/σ²`. Iterative WPE alternates that solve with
//! `σ² = |d|²`; the one-shot variant solves once with a supplied variance.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::spectrogram::Spectrogram;

pub const DEFAULT_ORDER: usize = 15;
pub const DEFAULT_DELAY: usize = 3;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-10;
pub const DEFAULT_DIAG_LOAD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WpeConfig {
    /// Prediction order per channel, in frames.
    pub order: usize,
    /// Prediction delay, in frames.
    pub delay: usize,
    pub iterations: usize,
    pub variance_floor: f64,
    /// Diagonal loading relative to the mean diagonal of each correlation
    /// matrix: `λ = diag_load · trace(A)/(M·L)`. Zero disables loading.
    pub diag_load: f64,
    /// Solve bins on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for WpeConfig {
    fn default() -> Self {
        WpeConfig {
            order: DEFAULT_ORDER,
            delay: DEFAULT_DELAY,
            iterations: DEFAULT_ITERATIONS,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            diag_load: DEFAULT_DIAG_LOAD,
            parallel: true,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::config("prediction order must be at least 1"));
        }
        if self.delay < 1 {
            return Err(Error::config("prediction delay must be at least 1"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::config("variance floor must be positive"));
        }
        if !(self.diag_load >= 0.0) {
            return Err(Error::config("diagonal loading must be non-negative"));
        }
        Ok(())
    }
}

/// Per-bin prediction filters, channel-major: entry `m·L + l` weights frame
/// `n-D-l` of channel `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionWeights {
    channels: usize,
    order: usize,
    delay: usize,
    per_bin: Vec<Vec<Complex64>>,
}

impl RegressionWeights {
    pub fn new(
        channels: usize,
        order: usize,
        delay: usize,
        per_bin: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        let len = channels * order;
        if let Some((k, g)) = per_bin.iter().enumerate().find(|(_, g)| g.len() != len) {
            return Err(Error::shape(format!(
                "bin {k} has {} weights, expected {channels}x{order}",
                g.len()
            )));
        }
        if per_bin.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::value("regression weights must be finite"));
        }
        Ok(RegressionWeights { channels, order, delay, per_bin })
    }

    pub fn zeros(bins: usize, channels: usize, order: usize, delay: usize) -> Self {
        RegressionWeights {
            channels,
            order,
            delay,
            per_bin: vec![vec![Complex64::new(0.0, 0.0); channels * order]; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.per_bin.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn bin(&self, k: usize) -> &[Complex64] {
        &self.per_bin[k]
    }

    pub fn max_abs_diff(&self, other: &RegressionWeights) -> f64 {
        self.per_bin
            .iter()
            .flatten()
            .zip(other.per_bin.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Desired-signal spectral variance, (frames × bins), strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl VarianceMap {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::shape(format!(
                "variance data length {} != {frames}x{bins}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::value(format!("variance entries must be positive and finite, got {v}")));
        }
        Ok(VarianceMap { frames, bins, data })
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(frames, bins, vec![value; frames * bins])
    }

    /// `max(|x[n,k,channel]|², floor)`.
    pub fn from_power(spec: &Spectrogram, channel: usize, floor: f64) -> Self {
        let (frames, bins, _) = spec.shape();
        let data = (0..frames)
            .flat_map(|n| (0..bins).map(move |k| (n, k)))
            .map(|(n, k)| spec.get(n, k, channel).norm_sqr().max(floor))
            .collect();
        VarianceMap { frames, bins, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.data[n * self.bins + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.frames, self.bins, self.data.iter().map(|v| v * factor).collect())
    }
}

/// Delayed context `[x¹[n-D], …, x¹[n-D-L+1], …, xᴹ[n-D], …]`; frames before
/// the start of the signal are zero.
pub fn stack_delayed(
    spec: &Spectrogram,
    n: usize,
    k: usize,
    delay: usize,
    order: usize,
) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(spec.channels() * order);
    for m in 0..spec.channels() {
        for l in 0..order {
            let lag = delay + l;
            v.push(if n >= lag && n - lag < spec.frames() {
                spec.get(n - lag, k, m)
            } else {
                Complex64::new(0.0, 0.0)
            });
        }
    }
    v
}

/// Frame series of a single bin, one vector per channel.
struct BinSeries {
    channels: Vec<Vec<Complex64>>,
}

impl BinSeries {
    fn extract(spec: &Spectrogram, k: usize) -> Self {
        BinSeries { channels: (0..spec.channels()).map(|m| spec.bin_series(k, m)).collect() }
    }

    fn frames(&self) -> usize {
        self.channels[0].len()
    }

    fn fill_context(&self, n: usize, delay: usize, order: usize, out: &mut [Complex64]) {
        for (m, x) in self.channels.iter().enumerate() {
            let dst = &mut out[m * order..(m + 1) * order];
            for (l, slot) in dst.iter_mut().enumerate() {
                let lag = delay + l;
                *slot = if n >= lag { x[n - lag] } else { Complex64::new(0.0, 0.0) };
            }
        }
    }

    /// `x¹[n] - gᴴ x̄[n-D]` for every frame.
    fn residual(&self, g: &[Complex64], delay: usize, order: usize) -> Vec<Complex64> {
        let mut ctx = vec![Complex64::new(0.0, 0.0); g.len()];
        (0..self.frames())
            .map(|n| {
                self.fill_context(n, delay, order, &mut ctx);
                let pred: Complex64 = g.iter().zip(&ctx).map(|(gi, xi)| gi.conj() * xi).sum();
                self.channels[0][n] - pred
            })
            .collect()
    }
}

fn check_variance(spec: &Spectrogram, var: &VarianceMap) -> Result<()> {
    if var.frames() != spec.frames() || var.bins() != spec.bins() {
        return Err(Error::shape(format!(
            "variance map is {}x{} but spectrogram is {}x{}",
            var.frames(),
            var.bins(),
            spec.frames(),
            spec.bins()
        )));
    }
    Ok(())
}

fn check_weights(spec: &Spectrogram, g: &RegressionWeights) -> Result<()> {
    if g.bins() != spec.bins() || g.channels() != spec.channels() {
        return Err(Error::shape(format!(
            "weights cover {} bins x {} channels, spectrogram has {} x {}",
            g.bins(),
            g.channels(),
            spec.bins(),
            spec.channels()
        )));
    }
    Ok(())
}

fn per_bin<T: Send>(parallel: bool, bins: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..bins).into_par_iter().map(f).collect()
    } else {
        (0..bins).map(f).collect()
    }
}

fn solve_bin(
    series: &BinSeries,
    var: &VarianceMap,
    k: usize,
    cfg: &WpeConfig,
) -> Result<Vec<Complex64>> {
    let dim = series.channels.len() * cfg.order;
    let mut a = HermitianMatrix::zeros(dim);
    let mut b = vec![Complex64::new(0.0, 0.0); dim];
    let mut ctx = vec![Complex64::new(0.0, 0.0); dim];
    for n in 0..series.frames() {
        if n < cfg.delay {
            continue;
        }
        series.fill_context(n, cfg.delay, cfg.order, &mut ctx);
        let w = 1.0 / var.get(n, k);
        a.add_outer_lower(&ctx, w);
        let target = series.channels[0][n].conj() * w;
        for (bi, xi) in b.iter_mut().zip(&ctx) {
            *bi += xi * target;
        }
    }
    a.mirror_lower();
    let trace = a.trace();
    if trace == 0.0 {
        // No context at all: b is zero too, so the loaded solution is zero.
        return if cfg.diag_load > 0.0 {
            Ok(vec![Complex64::new(0.0, 0.0); dim])
        } else {
            Err(Error::RankDeficient { bin: k, pivot: 0, dim })
        };
    }
    a.add_diagonal(cfg.diag_load * trace / dim as f64);
    a.solve(&b).map_err(|s| Error::RankDeficient { bin: k, pivot: s.pivot, dim })
}

/// Solves the variance-weighted normal equations independently per bin.
pub fn estimate_weights(
    spec: &Spectrogram,
    var: &VarianceMap,
    cfg: &WpeConfig,
) -> Result<RegressionWeights> {
    cfg.validate()?;
    check_variance(spec, var)?;
    let per_bin = per_bin(cfg.parallel, spec.bins(), |k| {
        solve_bin(&BinSeries::extract(spec, k), var, k, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RegressionWeights {
        channels: spec.channels(),
        order: cfg.order,
        delay: cfg.delay,
        per_bin,
    })
}

/// `d[n,k] = x¹[n,k] - g_kᴴ x̄[n-D,k]`, single-channel output.
pub fn predict_desired(
    spec: &Spectrogram,
    g: &RegressionWeights,
    cfg: &WpeConfig,
) -> Result<Spectrogram> {
    check_weights(spec, g)?;
    if g.order() != cfg.order || g.delay() != cfg.delay {
        return Err(Error::shape(format!(
            "weights were estimated with order {} / delay {}, config has {} / {}",
            g.order(),
            g.delay(),
            cfg.order,
            cfg.delay
        )));
    }
    let residuals = per_bin(cfg.parallel, spec.bins(), |k| {
        BinSeries::extract(spec, k).residual(g.bin(k), cfg.delay, cfg.order)
    });
    Ok(Spectrogram::from_fn(spec.frames(), 1, spec.config().clone(), |n, k, _| residuals[k][n])
        .with_signal_len(spec.signal_len()))
}

/// `σ²[n,k] = max(|d[n,k]|², floor)`.
pub fn update_variance(desired: &Spectrogram, floor: f64) -> VarianceMap {
    VarianceMap::from_power(desired, 0, floor)
}

/// Negative log-likelihood with constants dropped:
/// `Σ_k Σ_n log σ² + |x¹ - gᴴ x̄|²/σ²`.
pub fn objective(spec: &Spectrogram, g: &RegressionWeights, var: &VarianceMap) -> Result<f64> {
    check_weights(spec, g)?;
    check_variance(spec, var)?;
    if let Some(v) = var.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::value(format!("objective needs positive variances, got {v}")));
    }
    let per_bin: Vec<f64> = (0..spec.bins())
        .map(|k| {
            let series = BinSeries::extract(spec, k);
            series
                .residual(g.bin(k), g.delay(), g.order())
                .iter()
                .enumerate()
                .map(|(n, d)| {
                    let s = var.get(n, k);
                    s.ln() + d.norm_sqr() / s
                })
                .sum()
        })
        .collect();
    Ok(per_bin.iter().sum())
}

#[derive(Debug, Clone)]
pub struct WpeOutput {
    pub desired: Spectrogram,
    pub weights: RegressionWeights,
    pub variance: VarianceMap,
    /// Number of per-bin weight solves performed.
    pub weight_solves: usize,
    /// Wall time spent in weight estimation.
    pub solve_time: Duration,
    /// Objective after every coordinate update, starting from `g = 0` with
    /// the initial variance. Empty unless tracing was requested.
    pub objective_trace: Vec<f64>,
}

/// Alternates weight estimation and variance update `cfg.iterations` times,
/// starting from `σ² = max(|x¹|², floor)`.
pub fn iterative_wpe(spec: &Spectrogram, cfg: &WpeConfig) -> Result<WpeOutput> {
    run_iterative(spec, cfg, false)
}

/// As [`iterative_wpe`] but also records the objective after each half-step.
pub fn iterative_wpe_traced(spec: &Spectrogram, cfg: &WpeConfig) -> Result<WpeOutput> {
    run_iterative(spec, cfg, true)
}

fn run_iterative(spec: &Spectrogram, cfg: &WpeConfig, trace: bool) -> Result<WpeOutput> {
    cfg.validate()?;
    if cfg.iterations < 1 {
        return Err(Error::config("iterative WPE needs at least one iteration"));
    }
    let mut variance = VarianceMap::from_power(spec, 0, cfg.variance_floor);
    let mut objective_trace = Vec::new();
    if trace {
        let zero = RegressionWeights::zeros(spec.bins(), spec.channels(), cfg.order, cfg.delay);
        objective_trace.push(objective(spec, &zero, &variance)?);
    }
    let mut result = None;
    let mut solve_time = Duration::ZERO;
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        let weights = estimate_weights(spec, &variance, cfg)?;
        solve_time += start.elapsed();
        if trace {
            objective_trace.push(objective(spec, &weights, &variance)?);
        }
        let desired = predict_desired(spec, &weights, cfg)?;
        variance = update_variance(&desired, cfg.variance_floor);
        if trace {
            objective_trace.push(objective(spec, &weights, &variance)?);
        }
        result = Some((desired, weights));
    }
    let (desired, weights) = result.expect("at least one iteration");
    Ok(WpeOutput {
        desired,
        weights,
        variance,
        weight_solves: cfg.iterations * spec.bins(),
        solve_time,
        objective_trace,
    })
}

/// Single weight solve with an externally supplied variance, followed by
/// prediction of the desired signal.
pub fn oneshot_wpe(spec: &Spectrogram, var: &VarianceMap, cfg: &WpeConfig) -> Result<Spectrogram> {
    let weights = estimate_weights(spec, var, cfg)?;
    predict_desired(spec, &weights, cfg)
}
