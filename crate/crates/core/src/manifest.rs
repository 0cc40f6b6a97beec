//! Plain-text scene manifests and run records.
//!
//! A scene manifest has one scene per line: `source seed rt60 snr_db`,
//! whitespace separated. `source` is a WAV path (relative paths resolve
//! against the manifest's directory) or `synth:<seconds>` for a generated
//! speech-like signal. `snr_db` may be `inf` for noise-free scenes. Blank
//! lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::scene::{make_rir_at, render_scene, synth_speech, NoiseSource, SceneTriple, WhiteNoise};

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synth { seconds: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub source: SceneSource,
    pub seed: u64,
    pub rt60: f64,
    pub snr_db: f64,
}

impl SceneSpec {
    /// Stable identifier derived from the manifest position.
    pub fn id(index: usize) -> String {
        format!("scene{index:04}")
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<SceneSpec>> {
    let mut specs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("expected `source seed rt60 snr_db`"));
        }
        let source = match fields[0].strip_prefix("synth:") {
            Some(secs) => SceneSource::Synth {
                seconds: secs.parse().map_err(|_| bad("bad synth duration"))?,
            },
            None => {
                let p = Path::new(fields[0]);
                SceneSource::File(if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) })
            }
        };
        let seed = fields[1].parse().map_err(|_| bad("bad seed"))?;
        let rt60: f64 = fields[2].parse().map_err(|_| bad("bad rt60"))?;
        let snr_db: f64 = fields[3].parse().map_err(|_| bad("bad snr"))?;
        if !(rt60 > 0.0) {
            return Err(bad("rt60 must be positive"));
        }
        if snr_db.is_nan() {
            return Err(bad("snr is not a number"));
        }
        specs.push(SceneSpec { source, seed, rt60, snr_db });
    }
    Ok(specs)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn format_manifest(specs: &[SceneSpec]) -> String {
    let mut out = String::from("# source\tseed\trt60\tsnr_db\n");
    for s in specs {
        let src = match &s.source {
            SceneSource::Synth { seconds } => format!("synth:{seconds}"),
            SceneSource::File(p) => p.display().to_string(),
        };
        let _ = writeln!(out, "{src}\t{}\t{}\t{}", s.seed, s.rt60, s.snr_db);
    }
    out
}

/// Renders the scene: RIR of `ceil(rt60·fs)` taps, white noise, both seeded
/// from the spec.
pub fn build_scene(spec: &SceneSpec, channels: usize) -> Result<SceneTriple> {
    let src = match &spec.source {
        SceneSource::Synth { seconds } => synth_speech(*seconds, DEFAULT_SAMPLE_RATE, spec.seed)?,
        SceneSource::File(p) => Waveform::read_wav(p)?.select(0),
    };
    let fs = src.sample_rate();
    let len = ((spec.rt60 * fs as f64).ceil() as usize).max(1);
    let rir = make_rir_at(spec.rt60, len, channels, spec.seed, fs)?;
    let noise = WhiteNoise::new(spec.seed ^ 0x05ee_d0f0_015e)
        .generate(channels, src.len() + len - 1, fs)?;
    let mut scene = render_scene(&src, &rir, &noise, spec.snr_db)?;
    scene.seed = spec.seed;
    Ok(scene)
}

/// Ordered `key=value` record of a run's effective configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("run manifest line without '=': {line}")))?;
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::audio::write_atomic(path, self.to_text())?;
        Ok(())
    }
}
