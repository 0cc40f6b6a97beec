//! Multichannel time-domain signals and WAV file I/O.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Real-valued samples per channel, all channels of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::Empty("waveform has no channels"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("waveform channels differ in length"));
        }
        Ok(Waveform { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels.max(1)], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Single-channel waveform holding channel `m`.
    pub fn select(&self, m: usize) -> Waveform {
        Waveform {
            channels: vec![self.channels[m].clone()],
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Mean power over all channels and samples.
    pub fn power(&self) -> f64 {
        let total: f64 = self.channels.iter().flatten().map(|x| x * x).sum();
        total / (self.len() * self.num_channels()).max(1) as f64
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let reader = WavReader::open(path)?;
        Self::from_reader(reader)
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_reader(WavReader::new(Cursor::new(bytes))?)
    }

    fn from_reader<R: std::io::Read>(reader: WavReader<R>) -> Result<Self> {
        let spec = reader.spec();
        let m = spec.channels as usize;
        if m == 0 {
            return Err(Error::Empty("wav has no channels"));
        }
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<Result<_, _>>()?,
            (SampleFormat::Int, 24) => reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / 8_388_608.0))
                .collect::<Result<_, _>>()?,
            (SampleFormat::Int, 32) => reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / 2_147_483_648.0))
                .collect::<Result<_, _>>()?,
            (SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::Format(format!("unsupported wav sample format {fmt:?}/{bits}")))
            }
        };
        let len = interleaved.len() / m;
        let mut channels = vec![Vec::with_capacity(len); m];
        for frame in interleaved.chunks_exact(m) {
            for (c, &v) in channels.iter_mut().zip(frame) {
                c.push(v);
            }
        }
        Waveform::new(channels, spec.sample_rate)
    }

    /// Writes 32-bit float PCM. The file appears atomically.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_wav_as(path, WavEncoding::Float32)
    }

    pub fn write_wav_as(&self, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
        let path = path.as_ref();
        let tmp = tmp_path(path);
        {
            let file = BufWriter::new(fs::File::create(&tmp)?);
            let spec = WavSpec {
                channels: self.num_channels() as u16,
                sample_rate: self.sample_rate,
                bits_per_sample: encoding.bits(),
                sample_format: encoding.format(),
            };
            let mut w = WavWriter::new(file, spec)?;
            for i in 0..self.len() {
                for c in &self.channels {
                    match encoding {
                        WavEncoding::Float32 => w.write_sample(c[i] as f32)?,
                        WavEncoding::Pcm16 => {
                            let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0);
                            w.write_sample(v as i16)?
                        }
                    }
                }
            }
            w.finalize()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl WavEncoding {
    fn bits(self) -> u16 {
        match self {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        }
    }

    fn format(self) -> SampleFormat {
        match self {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        }
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> std::io::Result<()> {
    let path = path.as_ref();
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
