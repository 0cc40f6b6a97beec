//! Command-line front end: `enhance`, `train`, `simulate`, `eval`, `rerun`.
//!
//! Every command records its effective flags in a `key=value` run manifest
//! next to its outputs; `rerun <manifest>` replays it.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use image::{ImageBuffer, Rgb};
use rayon::prelude::*;

use crate::audio::{write_atomic, Waveform};
use crate::manifest::{
    build_scene, format_manifest, read_manifest, RunManifest, SceneSource, SceneSpec,
};
use crate::metrics::{cepstral_distance, format_report, segmental_snr, EvalRow};
use crate::mlp::{train, MlpModel, Topology, TrainConfig};
use crate::pipeline::{EnhanceMode, Enhancer, Reference, StageTiming};
use crate::scene::measured_snr_db;
use crate::spectrogram::Spectrogram;
use crate::stft::{analyze, StftConfig};
use crate::wpe::WpeConfig;

pub const MODEL_ENV: &str = "DNNWPE_MODEL";

#[derive(Debug, Parser)]
#[command(name = "dnnwpe", version, about = "WPE dereverberation with DNN-estimated masks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance one multichannel WAV file into a mono WAV file.
    Enhance(EnhanceArgs),
    /// Train the mask estimator on scenes from a manifest.
    Train(TrainArgs),
    /// Render clean/reverberant/mixture WAV triplets from a manifest.
    Simulate(SimulateArgs),
    /// Enhance a simulated corpus in several modes and report metrics.
    Eval(EvalArgs),
    /// Replay a run manifest written by another command.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DspArgs {
    /// Prediction order per channel, in frames.
    #[arg(long, default_value_t = crate::wpe::DEFAULT_ORDER)]
    pub order: usize,
    /// Prediction delay, in frames.
    #[arg(long, default_value_t = crate::wpe::DEFAULT_DELAY)]
    pub delay: usize,
    /// Iterations of the iterative WPE modes.
    #[arg(long, default_value_t = crate::wpe::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = crate::wpe::DEFAULT_VARIANCE_FLOOR)]
    pub variance_floor: f64,
    #[arg(long, default_value_t = crate::wpe::DEFAULT_DIAG_LOAD)]
    pub diag_load: f64,
    /// Frame length in samples; overriding it lifts the 16 kHz requirement.
    #[arg(long)]
    pub frame_len: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub dft_len: Option<usize>,
}

impl DspArgs {
    pub fn wpe(&self) -> WpeConfig {
        WpeConfig {
            order: self.order,
            delay: self.delay,
            iterations: self.iterations,
            variance_floor: self.variance_floor,
            diag_load: self.diag_load,
            parallel: true,
        }
    }

    pub fn stft(&self) -> anyhow::Result<StftConfig> {
        let mut cfg = StftConfig::default();
        if let Some(f) = self.frame_len {
            cfg.frame_len = f;
            cfg.sample_rate = None;
            cfg.hop = self.hop.unwrap_or(f / 5);
            cfg.dft_len = self.dft_len.unwrap_or(f);
        } else {
            cfg.hop = self.hop.unwrap_or(cfg.hop);
            cfg.dft_len = self.dft_len.unwrap_or(cfg.dft_len);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn record(&self, m: &mut RunManifest) -> anyhow::Result<()> {
        let stft = self.stft()?;
        m.set("order", self.order);
        m.set("delay", self.delay);
        m.set("iterations", self.iterations);
        m.set("variance-floor", self.variance_floor);
        m.set("diag-load", self.diag_load);
        m.set("frame-len", stft.frame_len);
        m.set("hop", stft.hop);
        m.set("dft-len", stft.dft_len);
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnhanceArgs {
    /// Input WAV (any channel count).
    #[arg(long)]
    pub input: PathBuf,
    /// Output mono WAV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "proposed", value_parser = ["proposed", "wpe", "wpe-mask"])]
    pub mode: String,
    #[arg(long, env = MODEL_ENV)]
    pub model: Option<PathBuf>,
    /// Also write a key=value timing record here.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[command(flatten)]
    pub dsp: DspArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Scene manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rms_eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "64,64,64")]
    pub hidden: String,
    /// Context frames on each side of the current frame.
    #[arg(long, default_value_t = 2)]
    pub context: usize,
    #[command(flatten)]
    pub dsp: DspArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scene manifest; when absent, one is generated from the flags below.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    /// Number of generated scenes.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0.3)]
    pub rt60_min: f64,
    #[arg(long, default_value_t = 0.8)]
    pub rt60_max: f64,
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated modes: mixture, proposed, wpe, wpe-mask, oracle.
    #[arg(long, default_value = "mixture,wpe,oracle")]
    pub modes: String,
    #[arg(long, env = MODEL_ENV)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    /// Write log-magnitude PNGs of clean, mixture and every output.
    #[arg(long)]
    pub spectrograms: bool,
    #[command(flatten)]
    pub dsp: DspArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Rerun { manifest } => cmd_rerun(&manifest),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: Option<&Path>) -> anyhow::Result<Option<Arc<MlpModel>>> {
    path.map(|p| {
        MlpModel::load_file(p)
            .map(Arc::new)
            .with_context(|| format!("loading model {}", p.display()))
    })
    .transpose()
}

pub fn cmd_enhance(a: &EnhanceArgs) -> anyhow::Result<()> {
    let mode: EnhanceMode = a.mode.parse()?;
    let input = Waveform::read_wav(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let model = load_model(a.model.as_deref())?;
    if model.is_none() && mode != EnhanceMode::Wpe {
        bail!("mode {mode} needs --model or ${MODEL_ENV}");
    }
    let mut enhancer = Enhancer::new(mode, a.dsp.wpe(), a.dsp.stft()?);
    if let Some(m) = model {
        enhancer = enhancer.with_model(m);
    }
    let (out, timing) = enhancer.time_enhance(&input, None)?;
    out.write_wav(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(t) = &a.timing {
        write_atomic(t, timing.to_record(mode))?;
    }

    let mut m = RunManifest::new("enhance");
    m.set("input", a.input.display());
    m.set("out", a.out.display());
    m.set("mode", mode);
    if let Some(p) = &a.model {
        m.set("model", p.display());
    }
    if let Some(t) = &a.timing {
        m.set("timing", t.display());
    }
    a.dsp.record(&mut m)?;
    m.write(with_suffix(&a.out, ".manifest"))?;
    Ok(())
}

fn parse_hidden(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().with_context(|| format!("bad layer width {w:?}")))
        .collect()
}

fn build_scenes(specs: &[SceneSpec], channels: usize) -> anyhow::Result<Vec<crate::scene::SceneTriple>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| build_scene(s, channels).with_context(|| format!("scene {i}")))
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let specs = read_manifest(&a.manifest)
        .with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    if specs.is_empty() {
        bail!("manifest {} lists no scenes", a.manifest.display());
    }
    let scenes = build_scenes(&specs, 1)?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        rho: a.rho,
        rms_eps: a.rms_eps,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    let topology = Topology { hidden: parse_hidden(&a.hidden)?, context: a.context };
    let report = train(&scenes, &a.dsp.stft()?, &cfg, &topology)?;
    report.model.save_file(&a.out)?;

    let csv = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let mut text = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(text, "{},{l:.17e}", i + 1);
    }
    write_atomic(&csv, text)?;

    let mut m = RunManifest::new("train");
    m.set("manifest", a.manifest.display());
    m.set("out", a.out.display());
    m.set("loss-csv", csv.display());
    m.set("epochs", a.epochs);
    m.set("batch-size", a.batch_size);
    m.set("learning-rate", a.learning_rate);
    m.set("rho", a.rho);
    m.set("rms-eps", a.rms_eps);
    m.set("seed", a.seed);
    m.set("hidden", &a.hidden);
    m.set("context", a.context);
    a.dsp.record(&mut m)?;
    m.write(with_suffix(&a.out, ".manifest"))?;
    Ok(())
}

/// Evenly spread rt60 values over `[min, max]`, `synth:` sources.
pub fn generate_specs(a: &SimulateArgs) -> Vec<SceneSpec> {
    (0..a.count)
        .map(|i| {
            let u = if a.count > 1 { i as f64 / (a.count - 1) as f64 } else { 0.0 };
            SceneSpec {
                source: SceneSource::Synth { seconds: a.seconds },
                seed: a.seed + i as u64,
                rt60: a.rt60_min + u * (a.rt60_max - a.rt60_min),
                snr_db: a.snr,
            }
        })
        .collect()
}

pub fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating output directory {}", a.out_dir.display()))?;
    let specs = match &a.manifest {
        Some(p) => read_manifest(p).with_context(|| format!("reading manifest {}", p.display()))?,
        None => generate_specs(a),
    };
    write_atomic(a.out_dir.join("scenes.txt"), format_manifest(&specs))
        .with_context(|| format!("writing to {}", a.out_dir.display()))?;
    let lines: Vec<String> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| simulate_scene(i, spec, a).with_context(|| format!("scene {i}")))
        .collect::<anyhow::Result<_>>()?;
    let snr_lines = std::iter::once("id\tsnr_db\tmeasured_db\n".to_string())
        .chain(lines)
        .collect::<String>();
    write_atomic(a.out_dir.join("snr.tsv"), snr_lines)?;

    let mut m = RunManifest::new("simulate");
    if let Some(p) = &a.manifest {
        m.set("manifest", p.display());
    }
    m.set("out-dir", a.out_dir.display());
    m.set("channels", a.channels);
    m.set("count", a.count);
    m.set("seconds", a.seconds);
    m.set("rt60-min", a.rt60_min);
    m.set("rt60-max", a.rt60_max);
    m.set("snr", a.snr);
    m.set("seed", a.seed);
    m.write(a.out_dir.join("run.manifest"))?;
    Ok(())
}

fn simulate_scene(index: usize, spec: &SceneSpec, a: &SimulateArgs) -> anyhow::Result<String> {
    let scene = build_scene(spec, a.channels)?;
    let id = SceneSpec::id(index);
    scene.clean.write_wav(a.out_dir.join(format!("{id}_clean.wav")))?;
    scene.reverberant.write_wav(a.out_dir.join(format!("{id}_reverberant.wav")))?;
    scene.mixture.write_wav(a.out_dir.join(format!("{id}_mixture.wav")))?;
    let noise = Waveform::new(
        scene
            .mixture
            .channels()
            .iter()
            .zip(scene.reverberant.channels())
            .map(|(m, r)| m.iter().zip(r).map(|(x, y)| x - y).collect())
            .collect(),
        scene.mixture.sample_rate(),
    )?;
    let measured = if spec.snr_db.is_finite() {
        measured_snr_db(&scene.reverberant, &noise)
    } else {
        f64::INFINITY
    };
    Ok(format!("{id}\t{}\t{measured:.4}\n", spec.snr_db))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvalMode {
    Mixture,
    Enhance(EnhanceMode),
}

impl EvalMode {
    fn name(self) -> &'static str {
        match self {
            EvalMode::Mixture => "mixture",
            EvalMode::Enhance(m) => m.name(),
        }
    }
}

fn parse_modes(s: &str) -> anyhow::Result<Vec<EvalMode>> {
    s.split(',')
        .map(|m| match m.trim() {
            "mixture" => Ok(EvalMode::Mixture),
            other => Ok(EvalMode::Enhance(other.parse()?)),
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let modes = parse_modes(&a.modes)?;
    if modes.is_empty() {
        bail!("no evaluation modes given");
    }
    let model = load_model(a.model.as_deref())?;
    if model.is_none() && modes.contains(&EvalMode::Enhance(EnhanceMode::Proposed)) {
        bail!("mode proposed needs --model or ${MODEL_ENV}");
    }
    let specs = read_manifest(&a.manifest)
        .with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    if specs.is_empty() {
        bail!("manifest {} lists no scenes", a.manifest.display());
    }
    fs::create_dir_all(&a.out_dir)?;
    let stft = a.dsp.stft()?;
    let wpe = a.dsp.wpe();

    let per_scene: Vec<(Vec<EvalRow>, String)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            eval_scene(i, spec, a, &modes, model.as_ref(), &stft, &wpe)
                .with_context(|| format!("scene {i}"))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut rows = Vec::new();
    let mut timing = String::from(
        "id\tmode\tanalysis_secs\tmask_inference_secs\tweight_solve_secs\tfiltering_secs\tistft_secs\ttotal_secs\tweight_solves\n",
    );
    for (r, t) in per_scene {
        rows.extend(r);
        timing.push_str(&t);
    }
    write_atomic(a.out_dir.join("report.tsv"), format_report(&rows))?;
    write_atomic(a.out_dir.join("timing.tsv"), timing)?;

    let mut m = RunManifest::new("eval");
    m.set("manifest", a.manifest.display());
    m.set("out-dir", a.out_dir.display());
    m.set("modes", &a.modes);
    if let Some(p) = &a.model {
        m.set("model", p.display());
    }
    m.set("channels", a.channels);
    if a.spectrograms {
        m.set("spectrograms", "");
    }
    a.dsp.record(&mut m)?;
    m.write(a.out_dir.join("run.manifest"))?;
    Ok(())
}

fn eval_scene(
    index: usize,
    spec: &SceneSpec,
    a: &EvalArgs,
    modes: &[EvalMode],
    model: Option<&Arc<MlpModel>>,
    stft: &StftConfig,
    wpe: &WpeConfig,
) -> anyhow::Result<(Vec<EvalRow>, String)> {
    let id = SceneSpec::id(index);
    let scene = build_scene(spec, a.channels)?;
    let clean = scene.clean.select(0);
    let reference = Reference { clean: &scene.clean, reverberant: &scene.reverberant };
    if a.spectrograms {
        write_spectrogram_png(&clean, stft, &a.out_dir.join(format!("{id}_clean.png")))?;
        write_spectrogram_png(
            &scene.mixture.select(0),
            stft,
            &a.out_dir.join(format!("{id}_mixture.png")),
        )?;
    }
    let mut rows = Vec::new();
    let mut timing = String::new();
    for &mode in modes {
        let (out, t) = match mode {
            EvalMode::Mixture => (scene.mixture.select(0), None),
            EvalMode::Enhance(m) => {
                let mut e = Enhancer::new(m, wpe.clone(), stft.clone());
                if let Some(model) = model {
                    e = e.with_model(model.clone());
                }
                let (y, t) = e.time_enhance(&scene.mixture, Some(reference))?;
                (y, Some(t))
            }
        };
        rows.push(EvalRow {
            id: id.clone(),
            mode: mode.name().to_string(),
            cd: cepstral_distance(&clean, &out, stft)?,
            seg_snr: segmental_snr(&clean, &out)?,
        });
        if let Some(t) = t {
            push_timing_row(&mut timing, &id, mode.name(), &t);
        }
        if a.spectrograms && mode != EvalMode::Mixture {
            let png = a.out_dir.join(format!("{id}_{}.png", mode.name()));
            write_spectrogram_png(&out, stft, &png)?;
        }
    }
    Ok((rows, timing))
}

fn push_timing_row(out: &mut String, id: &str, mode: &str, t: &StageTiming) {
    let _ = writeln!(
        out,
        "{id}\t{mode}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{}",
        t.analysis.as_secs_f64(),
        t.mask_inference.as_secs_f64(),
        t.weight_solve.as_secs_f64(),
        t.filtering.as_secs_f64(),
        t.istft.as_secs_f64(),
        t.total.as_secs_f64(),
        t.weight_solves,
    );
}

/// Rebuilds the argument list from a run manifest and runs it again.
pub fn cmd_rerun(path: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m = RunManifest::parse(&text)?;
    let command = m.get("command").context("run manifest has no command")?;
    let mut args = vec!["dnnwpe".to_string(), command.to_string()];
    for (k, v) in m.entries().iter().filter(|(k, _)| k != "command") {
        args.push(format!("--{k}"));
        if !v.is_empty() {
            args.push(v.clone());
        }
    }
    run(args)
}

/// Log-magnitude heat map of channel 0: time left to right, frequency bottom
/// to top, 80 dB range below the peak.
pub fn spectrogram_image(spec: &Spectrogram) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (frames, bins, _) = spec.shape();
    let db: Vec<f64> = spec
        .data()
        .iter()
        .step_by(spec.channels())
        .map(|c| 20.0 * (c.norm() + 1e-12).log10())
        .collect();
    let peak = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ImageBuffer::from_fn(frames.max(1) as u32, bins as u32, |x, y| {
        if frames == 0 {
            return Rgb([0, 0, 0]);
        }
        let k = bins - 1 - y as usize;
        let v = ((db[x as usize * bins + k] - peak + 80.0) / 80.0).clamp(0.0, 1.0);
        heat(v)
    })
}

fn heat(v: f64) -> Rgb<u8> {
    // Black → red → yellow → white.
    let r = (3.0 * v).min(1.0);
    let g = (3.0 * v - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * v - 2.0).clamp(0.0, 1.0);
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

pub fn write_spectrogram_png(wav: &Waveform, cfg: &StftConfig, path: &Path) -> anyhow::Result<()> {
    let spec = analyze(wav, cfg)?;
    spectrogram_image(&spec)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
