//! End-to-end enhancement: mask-guided one-shot WPE, iterative WPE, and
//! iterative WPE followed by a noise mask.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::mask::{apply_mask, irm_from_spectrograms, Mask, MaskEpsilon};
use crate::mlp::MlpModel;
use crate::spectrogram::Spectrogram;
use crate::stft::{analyze, synthesize, StftConfig};
use crate::wpe::{estimate_weights, iterative_wpe, predict_desired, VarianceMap, WpeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnhanceMode {
    /// Network masks, one weight solve with the masked variance, then the
    /// desired-speech mask on the output.
    Proposed,
    /// Iterative WPE on the raw mixture.
    Wpe,
    /// Iterative WPE followed by the reverberant-speech mask of channel 1.
    WpeMask,
    /// As `Proposed`, with ideal masks from ground truth.
    OneshotOracle,
}

impl EnhanceMode {
    pub const ALL: [EnhanceMode; 4] =
        [EnhanceMode::Proposed, EnhanceMode::Wpe, EnhanceMode::WpeMask, EnhanceMode::OneshotOracle];

    pub fn name(self) -> &'static str {
        match self {
            EnhanceMode::Proposed => "proposed",
            EnhanceMode::Wpe => "wpe",
            EnhanceMode::WpeMask => "wpe-mask",
            EnhanceMode::OneshotOracle => "oracle",
        }
    }
}

impl std::str::FromStr for EnhanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(EnhanceMode::Proposed),
            "wpe" => Ok(EnhanceMode::Wpe),
            "wpe-mask" | "wpe_mask" => Ok(EnhanceMode::WpeMask),
            "oracle" | "oneshot-oracle" | "oneshot_oracle" => Ok(EnhanceMode::OneshotOracle),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnhanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth signals aligned with a mixture, used by oracle masks.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub clean: &'a Waveform,
    pub reverberant: &'a Waveform,
}

/// Ratio masks for every channel: reverberant-speech and desired-speech.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub reverberant: Mask,
    pub desired: Mask,
}

/// Wall time per processing stage of one enhancement call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTiming {
    pub analysis: Duration,
    pub mask_inference: Duration,
    pub weight_solve: Duration,
    /// Masking, prediction and variance updates.
    pub filtering: Duration,
    pub istft: Duration,
    pub total: Duration,
    pub weight_solves: usize,
}

impl StageTiming {
    pub fn stage_sum(&self) -> Duration {
        self.analysis + self.mask_inference + self.weight_solve + self.filtering + self.istft
    }

    /// `key=value` lines, seconds as decimals.
    pub fn to_record(&self, mode: EnhanceMode) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={mode}");
        for (k, d) in [
            ("analysis_secs", self.analysis),
            ("mask_inference_secs", self.mask_inference),
            ("weight_solve_secs", self.weight_solve),
            ("filtering_secs", self.filtering),
            ("istft_secs", self.istft),
            ("total_secs", self.total),
        ] {
            let _ = writeln!(s, "{k}={:.9}", d.as_secs_f64());
        }
        let _ = writeln!(s, "weight_solves={}", self.weight_solves);
        s
    }
}

#[derive(Debug, Clone)]
pub struct Enhancer {
    pub mode: EnhanceMode,
    pub wpe: WpeConfig,
    pub stft: StftConfig,
    pub eps: MaskEpsilon,
    model: Option<Arc<MlpModel>>,
}

impl Enhancer {
    pub fn new(mode: EnhanceMode, wpe: WpeConfig, stft: StftConfig) -> Self {
        Enhancer { mode, wpe, stft, eps: MaskEpsilon::default(), model: None }
    }

    pub fn with_model(mut self, model: Arc<MlpModel>) -> Self {
        self.model = Some(model);
        self
    }

    pub fn model(&self) -> Option<&MlpModel> {
        self.model.as_deref()
    }

    pub fn enhance(&self, mixture: &Waveform) -> Result<Waveform> {
        Ok(self.time_enhance(mixture, None)?.0)
    }

    pub fn enhance_with_reference(
        &self,
        mixture: &Waveform,
        reference: Option<Reference<'_>>,
    ) -> Result<Waveform> {
        Ok(self.time_enhance(mixture, reference)?.0)
    }

    /// Enhances `mixture` and reports per-stage wall time. The output is the
    /// channel-1 desired signal, same length as the input.
    pub fn time_enhance(
        &self,
        mixture: &Waveform,
        reference: Option<Reference<'_>>,
    ) -> Result<(Waveform, StageTiming)> {
        let t0 = Instant::now();
        let mut timing = StageTiming::default();
        if mixture.num_channels() == 0 {
            return Err(Error::Empty("mixture has no channels"));
        }
        if self.mode == EnhanceMode::Proposed && self.model.is_none() {
            return Err(Error::MissingModel("proposed mode needs a trained model"));
        }
        if self.mode == EnhanceMode::OneshotOracle && reference.is_none() {
            return Err(Error::MissingModel("oracle mode needs ground-truth references"));
        }

        let start = Instant::now();
        let x = analyze(mixture, &self.stft)?;
        timing.analysis = start.elapsed();

        let desired = match self.mode {
            EnhanceMode::Proposed | EnhanceMode::OneshotOracle => {
                let start = Instant::now();
                let masks = match self.mode {
                    EnhanceMode::Proposed => self.model_masks(&x)?,
                    _ => self.oracle_masks(&x, reference.expect("checked above"))?,
                };
                timing.mask_inference = start.elapsed();
                self.masked_oneshot(&x, &masks, &mut timing)?
            }
            EnhanceMode::Wpe | EnhanceMode::WpeMask => {
                let start = Instant::now();
                let out = iterative_wpe(&x, &self.wpe)?;
                timing.weight_solve = out.solve_time;
                timing.weight_solves = out.weight_solves;
                timing.filtering = start.elapsed().saturating_sub(out.solve_time);
                if self.mode == EnhanceMode::WpeMask {
                    let start = Instant::now();
                    let masks = match (&self.model, reference) {
                        (Some(_), _) => self.model_masks(&x)?,
                        (None, Some(r)) => self.oracle_masks(&x, r)?,
                        (None, None) => {
                            return Err(Error::MissingModel(
                                "wpe-mask mode needs a model or ground-truth references",
                            ))
                        }
                    };
                    timing.mask_inference = start.elapsed();
                    let start = Instant::now();
                    let d = apply_mask(&out.desired, &masks.reverberant.channel(0))?;
                    timing.filtering += start.elapsed();
                    d
                } else {
                    out.desired
                }
            }
        };

        let start = Instant::now();
        let y = synthesize(&desired, &self.stft, mixture.sample_rate())?;
        timing.istft = start.elapsed();
        timing.total = t0.elapsed();
        Ok((y, timing))
    }

    /// Runs the mask-guided one-shot path with externally supplied masks.
    pub fn enhance_with_masks(&self, mixture: &Waveform, masks: &MaskPair) -> Result<Waveform> {
        let x = analyze(mixture, &self.stft)?;
        let d = self.masked_oneshot(&x, masks, &mut StageTiming::default())?;
        synthesize(&d, &self.stft, mixture.sample_rate())
    }

    pub fn model_masks(&self, x: &Spectrogram) -> Result<MaskPair> {
        let model = self.model.as_ref().ok_or(Error::MissingModel("no model loaded"))?;
        let (reverberant, desired) = model.predict_masks(x)?;
        Ok(MaskPair { reverberant, desired })
    }

    pub fn oracle_masks(&self, x: &Spectrogram, r: Reference<'_>) -> Result<MaskPair> {
        let rev = analyze(r.reverberant, &self.stft)?;
        let clean = analyze(r.clean, &self.stft)?;
        if !rev.same_shape(x) || !clean.same_shape(x) {
            return Err(Error::shape("reference signals do not match the mixture"));
        }
        Ok(MaskPair {
            reverberant: irm_from_spectrograms(&rev, x, self.eps)?,
            desired: irm_from_spectrograms(&clean, x, self.eps)?,
        })
    }

    /// Masks the mixture, estimates the variance from the masked channel 1,
    /// solves once, and applies the channel-1 desired-speech mask.
    fn masked_oneshot(
        &self,
        x: &Spectrogram,
        masks: &MaskPair,
        timing: &mut StageTiming,
    ) -> Result<Spectrogram> {
        let start = Instant::now();
        let noise_free = apply_mask(x, &masks.reverberant)?;
        let desired_mask = masks.desired.channel(0);
        let speech = apply_mask(&x.channel(0), &desired_mask)?;
        let variance = VarianceMap::from_power(&speech, 0, self.wpe.variance_floor);
        timing.filtering += start.elapsed();

        let start = Instant::now();
        let weights = estimate_weights(&noise_free, &variance, &self.wpe)?;
        timing.weight_solve += start.elapsed();
        timing.weight_solves += weights.bins();

        let start = Instant::now();
        let d = predict_desired(&noise_free, &weights, &self.wpe)?;
        let out = apply_mask(&d, &desired_mask)?;
        timing.filtering += start.elapsed();
        Ok(out)
    }
}
