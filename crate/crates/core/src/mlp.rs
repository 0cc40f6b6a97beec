//! Feed-forward mask estimator with two sigmoid heads.
//!
//! Input rows are normalized log-magnitude spectra of a frame and its
//! neighbours; the output layer has `2·K` units, the first `K` estimating the
//! noise-free reverberant mask and the last `K` the desired-speech mask.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{irm_from_spectrograms, Mask, MaskEpsilon};
use crate::scene::SceneTriple;
use crate::spectrogram::Spectrogram;
use crate::stft::{analyze, StftConfig};

pub const LOG_FLOOR: f64 = 1e-10;
const STD_FLOOR: f64 = 1e-8;
const MAGIC: &[u8; 8] = b"DWPEMLP\0";
pub const FORMAT_VERSION: u32 = 1;
const ACT_RELU: u32 = 1;
const ACT_SIGMOID: u32 = 2;

/// Hidden-layer widths and context half-width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub hidden: Vec<usize>,
    pub context: usize,
}

impl Default for Topology {
    /// Desk-scale default: three hidden layers of 64 units, ±2 frames.
    fn default() -> Self {
        Topology { hidden: vec![64; 3], context: 2 }
    }
}

impl Topology {
    /// Three hidden layers of 1024 units, ±2 frames.
    pub fn full_scale() -> Self {
        Topology { hidden: vec![1024; 3], context: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub rms_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rho: 0.9,
            rms_eps: 1e-8,
            batch_size: 64,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        // rho = 0 is accepted: it reduces RMSprop to sign-like steps.
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config("rho must lie in [0, 1)"));
        }
        if !(self.rms_eps >= 0.0) {
            return Err(Error::config("rms epsilon must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

/// Row-major (rows × cols) feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("feature data {} != {rows}x{cols}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::value("features must be finite"));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix { rows: idx.len(), cols: self.cols, data }
    }

    fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let cols = parts.first().ok_or(Error::Empty("no feature matrices"))?.cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::shape("feature matrices differ in width"));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(FeatureMatrix { rows, cols, data })
    }
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population moments over all rows; deviations are floored at 1e-8.
    pub fn fit(feats: &FeatureMatrix) -> Result<Self> {
        if feats.rows == 0 {
            return Err(Error::Empty("cannot fit normalization on zero rows"));
        }
        let n = feats.rows as f64;
        let mut mean = vec![0.0; feats.cols];
        for r in 0..feats.rows {
            for (m, v) in mean.iter_mut().zip(feats.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; feats.cols];
        for r in 0..feats.rows {
            for ((s, v), m) in var.iter_mut().zip(feats.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(feats)?;
        let mut out = feats.clone();
        for row in out.data.chunks_exact_mut(feats.cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn unapply(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(feats)?;
        let mut out = feats.clone();
        for row in out.data.chunks_exact_mut(feats.cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    fn check(&self, feats: &FeatureMatrix) -> Result<()> {
        if self.mean.len() != feats.cols || self.std.len() != feats.cols {
            return Err(Error::shape(format!(
                "normalization has {} features, matrix has {}",
                self.mean.len(),
                feats.cols
            )));
        }
        Ok(())
    }
}

/// Context-stacked log-magnitude features of one channel. Frames beyond the
/// edges replicate the first or last frame.
pub fn build_features(
    spec: &Spectrogram,
    channel: usize,
    context: usize,
    norm: Option<&Normalization>,
) -> Result<FeatureMatrix> {
    let (frames, bins, channels) = spec.shape();
    if frames == 0 {
        return Err(Error::Empty("spectrogram has no frames"));
    }
    if channel >= channels {
        return Err(Error::shape(format!("channel {channel} out of {channels}")));
    }
    let logmag: Vec<f64> = (0..frames)
        .flat_map(|n| (0..bins).map(move |k| (n, k)))
        .map(|(n, k)| (spec.get(n, k, channel).norm() + LOG_FLOOR).ln())
        .collect();
    let width = (2 * context + 1) * bins;
    let mut data = Vec::with_capacity(frames * width);
    for n in 0..frames {
        for j in 0..=2 * context {
            let src = (n + j).saturating_sub(context).min(frames - 1);
            data.extend_from_slice(&logmag[src * bins..(src + 1) * bins]);
        }
    }
    let raw = FeatureMatrix { rows: frames, cols: width, data };
    match norm {
        Some(n) => n.apply(&raw),
        None => Ok(raw),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major (outputs × inputs).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Layer { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    /// `y = x Wᵀ + b` for a (rows × inputs) batch.
    fn affine(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.outputs];
        out.par_chunks_mut(self.outputs).enumerate().for_each(|(r, y)| {
            let xr = &x[r * self.inputs..(r + 1) * self.inputs];
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                *yo = self.bias[o] + dot(xr, w);
            }
        });
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mask estimator: rectifier hidden layers, sigmoid output of width `2·bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub context: usize,
    pub bins: usize,
    pub norm: Normalization,
}

/// Parameter-shaped gradients plus the loss they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub loss: f64,
}

/// Squared-gradient running averages, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub layers: Vec<Layer>,
}

impl RmsPropState {
    pub fn new(model: &MlpModel) -> Self {
        RmsPropState {
            layers: model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }
}

struct Activations {
    /// Input followed by every layer's post-activation output.
    values: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn new_random(bins: usize, topology: &Topology, seed: u64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("model needs at least one bin"));
        }
        let input = (2 * topology.context + 1) * bins;
        Self::with_dims(input, &topology.hidden, bins, topology.context, seed)
    }

    /// Arbitrary input width; used when features do not come from spectra.
    pub fn with_dims(
        input: usize,
        hidden: &[usize],
        bins: usize,
        context: usize,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(2 * bins);
        let layers = dims.windows(2).map(|w| Layer::glorot(w[0], w[1], &mut rng)).collect();
        Ok(MlpModel { layers, context, bins, norm: Normalization::identity(input) })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or(Error::config("model has no layers"))?;
        for w in self.layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::config("layer dimensions do not chain"));
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::config("layer payload does not match its dimensions"));
            }
        }
        if self.output_dim() != 2 * self.bins {
            return Err(Error::config(format!(
                "output width {} != 2 x {} bins",
                self.output_dim(),
                self.bins
            )));
        }
        if self.norm.mean.len() != first.inputs || self.norm.std.len() != first.inputs {
            return Err(Error::config("normalization width differs from input width"));
        }
        if self.norm.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("normalization deviations must be positive"));
        }
        Ok(())
    }

    fn check_input(&self, feats: &FeatureMatrix) -> Result<()> {
        if feats.cols != self.input_dim() {
            return Err(Error::shape(format!(
                "features are {} wide, model expects {}",
                feats.cols,
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn activations(&self, feats: &FeatureMatrix) -> Activations {
        let rows = feats.rows;
        let mut values = vec![feats.data.clone()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(values.last().unwrap(), rows);
            if i == last {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            values.push(z);
        }
        Activations { values }
    }

    /// Raw (rows × 2K) sigmoid outputs.
    pub fn forward_raw(&self, feats: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_input(feats)?;
        Ok(self.activations(feats).values.pop().unwrap())
    }

    /// Splits the output into the reverberant-speech head and the
    /// desired-speech head, each (rows × K × 1).
    pub fn forward(&self, feats: &FeatureMatrix) -> Result<(Mask, Mask)> {
        let out = self.forward_raw(feats)?;
        split_heads(&out, feats.rows, self.bins)
    }

    fn targets_vec(&self, rows: usize, targets: (&Mask, &Mask)) -> Result<Vec<f64>> {
        let expect = (rows, self.bins, 1);
        if targets.0.shape() != expect || targets.1.shape() != expect {
            return Err(Error::shape(format!(
                "targets {:?}/{:?}, expected {expect:?}",
                targets.0.shape(),
                targets.1.shape()
            )));
        }
        let k = self.bins;
        let mut t = Vec::with_capacity(rows * 2 * k);
        for r in 0..rows {
            t.extend_from_slice(&targets.0.data()[r * k..(r + 1) * k]);
            t.extend_from_slice(&targets.1.data()[r * k..(r + 1) * k]);
        }
        Ok(t)
    }

    /// Mean over all entries of both heads of `(output - target)²`.
    pub fn loss(&self, feats: &FeatureMatrix, targets: (&Mask, &Mask)) -> Result<f64> {
        let out = self.forward_raw(feats)?;
        let t = self.targets_vec(feats.rows, targets)?;
        Ok(mse(&out, &t))
    }

    /// Gradient of [`MlpModel::loss`] with respect to every weight and bias.
    pub fn backward(&self, feats: &FeatureMatrix, targets: (&Mask, &Mask)) -> Result<Gradients> {
        self.check_input(feats)?;
        let t = self.targets_vec(feats.rows, targets)?;
        Ok(self.backward_flat(feats, &t))
    }

    fn backward_flat(&self, feats: &FeatureMatrix, t: &[f64]) -> Gradients {
        let rows = feats.rows;
        let acts = self.activations(feats);
        let out = acts.values.last().unwrap();
        let loss = mse(out, t);
        let scale = 2.0 / out.len() as f64;
        // dL/dz at the sigmoid layer.
        let mut delta: Vec<f64> = out
            .iter()
            .zip(t)
            .map(|(o, y)| scale * (o - y) * o * (1.0 - o))
            .collect();
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts.values[i];
            let (nin, nout) = (layer.inputs, layer.outputs);
            let mut g = Layer::zeros(nin, nout);
            g.weights.par_chunks_mut(nin).enumerate().for_each(|(o, gw)| {
                for r in 0..rows {
                    let d = delta[r * nout + o];
                    if d != 0.0 {
                        let x = &input[r * nin..(r + 1) * nin];
                        for (w, xi) in gw.iter_mut().zip(x) {
                            *w += d * xi;
                        }
                    }
                }
            });
            for (o, gb) in g.bias.iter_mut().enumerate() {
                *gb = (0..rows).map(|r| delta[r * nout + o]).sum();
            }
            if i > 0 {
                let mut prev = vec![0.0; rows * nin];
                prev.par_chunks_mut(nin).enumerate().for_each(|(r, p)| {
                    for o in 0..nout {
                        let d = delta[r * nout + o];
                        if d != 0.0 {
                            let w = &layer.weights[o * nin..(o + 1) * nin];
                            for (pi, wi) in p.iter_mut().zip(w) {
                                *pi += d * wi;
                            }
                        }
                    }
                });
                // Rectifier derivative, taken from the post-activation value.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
            grads.push(g);
        }
        grads.reverse();
        Gradients { layers: grads, loss }
    }

    /// Per-channel masks for a multichannel spectrogram; the same network is
    /// applied to every channel independently.
    pub fn predict_masks(&self, spec: &Spectrogram) -> Result<(Mask, Mask)> {
        if spec.bins() != self.bins {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, model was trained for {}",
                spec.bins(),
                self.bins
            )));
        }
        let mut heads_r = Vec::with_capacity(spec.channels());
        let mut heads_s = Vec::with_capacity(spec.channels());
        for m in 0..spec.channels() {
            let feats = build_features(spec, m, self.context, Some(&self.norm))?;
            let (r, s) = self.forward(&feats)?;
            heads_r.push(r);
            heads_s.push(s);
        }
        Ok((Mask::stack(&heads_r)?, Mask::stack(&heads_s)?))
    }

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            self.bins as u32,
            self.context as u32,
            self.layers.len() as u32,
            ACT_RELU,
            ACT_SIGMOID,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.layers {
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
        }
        let floats = self
            .norm
            .mean
            .iter()
            .chain(&self.norm.std)
            .chain(self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)));
        for v in floats {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a mask-estimator model file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let bins = read_u32(&mut r)? as usize;
        let context = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let (hidden_act, out_act) = (read_u32(&mut r)?, read_u32(&mut r)?);
        if hidden_act != ACT_RELU || out_act != ACT_SIGMOID {
            return Err(Error::Format(format!("unsupported activations {hidden_act}/{out_act}")));
        }
        if count == 0 || count > 64 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            dims.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
        }
        let input = dims[0].0;
        let mean = read_f64s(&mut r, input)?;
        let std = read_f64s(&mut r, input)?;
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs) in dims {
            let weights = read_f64s(&mut r, inputs * outputs)?;
            let bias = read_f64s(&mut r, outputs)?;
            layers.push(Layer { inputs, outputs, weights, bias });
        }
        let model = MlpModel { layers, context, bins, norm: Normalization { mean, std } };
        model.validate()?;
        Ok(model)
    }

    pub fn save_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = crate::audio::tmp_path(path);
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        std::fs::write(&tmp, buf)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::load(bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    if n > 1 << 28 {
        return Err(Error::Format(format!("implausible payload of {n} values")));
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn mse(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len().max(1) as f64
}

fn split_heads(out: &[f64], rows: usize, bins: usize) -> Result<(Mask, Mask)> {
    let mut r = Vec::with_capacity(rows * bins);
    let mut s = Vec::with_capacity(rows * bins);
    for row in out.chunks_exact(2 * bins) {
        r.extend_from_slice(&row[..bins]);
        s.extend_from_slice(&row[bins..]);
    }
    Ok((Mask::new(rows, bins, 1, r)?, Mask::new(rows, bins, 1, s)?))
}

/// `v ← ρ v + (1-ρ) g²`, `θ ← θ - η g / (√v + ε)`.
pub fn rmsprop_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut RmsPropState,
    cfg: &TrainConfig,
) -> Result<()> {
    let shapes_match = model.layers.len() == grads.layers.len()
        && model.layers.len() == state.layers.len()
        && model.layers.iter().zip(&grads.layers).zip(&state.layers).all(|((m, g), s)| {
            m.weights.len() == g.weights.len()
                && m.bias.len() == g.bias.len()
                && m.weights.len() == s.weights.len()
                && m.bias.len() == s.bias.len()
        });
    if !shapes_match {
        return Err(Error::shape("gradient or optimizer state does not match the model"));
    }
    let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = cfg.rho * *v + (1.0 - cfg.rho) * g * g;
            *p -= cfg.learning_rate * g / (v.sqrt() + cfg.rms_eps);
        }
    };
    for ((m, g), s) in model.layers.iter_mut().zip(&grads.layers).zip(state.layers.iter_mut()) {
        update(&mut m.weights, &g.weights, &mut s.weights);
        update(&mut m.bias, &g.bias, &mut s.bias);
    }
    Ok(())
}

/// Training inputs: normalized features and interleaved two-head targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
    pub bins: usize,
}

impl TrainingSet {
    /// Raw (unnormalized) features and ratio-mask targets from the first
    /// channel of every scene.
    pub fn from_scenes(
        scenes: &[SceneTriple],
        stft: &StftConfig,
        context: usize,
        eps: MaskEpsilon,
    ) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Empty("training set has no scenes"));
        }
        let bins = stft.bins();
        let mut feats = Vec::with_capacity(scenes.len());
        let mut targets = Vec::new();
        for scene in scenes {
            let mix = analyze(&scene.mixture.select(0), stft)?;
            let rev = analyze(&scene.reverberant.select(0), stft)?;
            let clean = analyze(&scene.clean.select(0), stft)?;
            let irm_r = irm_from_spectrograms(&rev, &mix, eps)?;
            let irm_s = irm_from_spectrograms(&clean, &mix, eps)?;
            for n in 0..mix.frames() {
                targets.extend_from_slice(&irm_r.data()[n * bins..(n + 1) * bins]);
                targets.extend_from_slice(&irm_s.data()[n * bins..(n + 1) * bins]);
            }
            feats.push(build_features(&mix, 0, context, None)?);
        }
        Ok(TrainingSet { features: FeatureMatrix::concat(&feats)?, targets, bins })
    }

    pub fn rows(&self) -> usize {
        self.features.rows
    }

    pub fn from_parts(features: FeatureMatrix, targets: Vec<f64>, bins: usize) -> Result<Self> {
        if targets.len() != features.rows * 2 * bins {
            return Err(Error::shape("targets must hold 2·bins values per feature row"));
        }
        Ok(TrainingSet { features, targets, bins })
    }

    /// Head masks for every row.
    pub fn target_masks(&self) -> Result<(Mask, Mask)> {
        split_heads(&self.targets, self.rows(), self.bins)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    /// Mean mini-batch loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Fits normalization on `set`, then runs seeded mini-batch RMSprop on the
/// two-head squared error.
pub fn train_on_set(set: &TrainingSet, cfg: &TrainConfig, topology: &Topology) -> Result<TrainReport> {
    cfg.validate()?;
    if set.rows() == 0 {
        return Err(Error::Empty("training set has no frames"));
    }
    let norm = Normalization::fit(&set.features)?;
    let features = norm.apply(&set.features)?;
    let mut model = MlpModel::with_dims(
        features.cols,
        &topology.hidden,
        set.bins,
        topology.context,
        cfg.seed,
    )?;
    model.norm = norm;
    let mut state = RmsPropState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..features.rows).collect();
    let width = 2 * set.bins;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = features.select_rows(idx);
            let mut t = Vec::with_capacity(idx.len() * width);
            for &r in idx {
                t.extend_from_slice(&set.targets[r * width..(r + 1) * width]);
            }
            let grads = model.backward_flat(&x, &t);
            if !grads.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += grads.loss * idx.len() as f64;
            rmsprop_step(&mut model, &grads, &mut state, cfg)?;
        }
        epoch_losses.push(total / features.rows as f64);
    }
    Ok(TrainReport { model, epoch_losses })
}

/// Trains on the first channel of every scene.
pub fn train(
    scenes: &[SceneTriple],
    stft: &StftConfig,
    cfg: &TrainConfig,
    topology: &Topology,
) -> Result<TrainReport> {
    let set = TrainingSet::from_scenes(scenes, stft, topology.context, MaskEpsilon::default())?;
    train_on_set(&set, cfg, topology)
}
