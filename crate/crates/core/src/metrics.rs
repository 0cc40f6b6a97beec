//! Cepstral distance and segmental SNR.

use std::f64::consts::LN_10;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::stft::{analyze, StftConfig};

pub const NUM_CEPSTRA: usize = 13;
pub const CEPSTRUM_LOG_FLOOR: f64 = 1e-10;
/// Reference frames this far below the loudest frame are left out of the mean.
pub const SILENCE_THRESHOLD_DB: f64 = -60.0;
pub const SEGMENT_SECS: f64 = 0.025;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;

/// Real-cepstrum coefficients `c_0 .. c_12` of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CepstralFrame(pub [f64; NUM_CEPSTRA]);

/// `10/ln 10 · sqrt((c0 - ĉ0)² + 2 Σ_{k=1..12} (ck - ĉk)²)`.
pub fn frame_distance(a: &CepstralFrame, b: &CepstralFrame) -> f64 {
    let d0 = a.0[0] - b.0[0];
    let rest: f64 = a.0[1..].iter().zip(&b.0[1..]).map(|(x, y)| (x - y) * (x - y)).sum();
    10.0 / LN_10 * (d0 * d0 + 2.0 * rest).sqrt()
}

struct FrameAnalysis {
    cepstra: Vec<CepstralFrame>,
    energies: Vec<f64>,
}

fn analyze_cepstra(wav: &Waveform, cfg: &StftConfig) -> Result<FrameAnalysis> {
    if wav.num_channels() != 1 {
        return Err(Error::shape("cepstral analysis expects a mono signal"));
    }
    if wav.is_empty() {
        return Err(Error::Empty("signal has no samples"));
    }
    let spec = analyze(wav, cfg)?;
    let n = cfg.dft_len;
    let bins = spec.bins();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut cepstra = Vec::with_capacity(spec.frames());
    let mut energies = Vec::with_capacity(spec.frames());
    for f in 0..spec.frames() {
        let mut energy = 0.0;
        for k in 0..n {
            let x = if k < bins { spec.get(f, k, 0) } else { spec.get(f, n - k, 0) };
            energy += x.norm_sqr();
            buf[k] = Complex64::new((x.norm() + CEPSTRUM_LOG_FLOOR).ln(), 0.0);
        }
        ifft.process(&mut buf);
        let mut c = [0.0; NUM_CEPSTRA];
        for (q, slot) in c.iter_mut().enumerate() {
            *slot = buf[q].re / n as f64;
        }
        cepstra.push(CepstralFrame(c));
        energies.push(energy / n as f64);
    }
    Ok(FrameAnalysis { cepstra, energies })
}

/// Per-frame real cepstra of the STFT magnitude.
pub fn cepstral_frames(wav: &Waveform, cfg: &StftConfig) -> Result<Vec<CepstralFrame>> {
    Ok(analyze_cepstra(wav, cfg)?.cepstra)
}

fn trim_pair(reference: &Waveform, estimate: &Waveform) -> Result<(Waveform, Waveform)> {
    if reference.num_channels() != 1 || estimate.num_channels() != 1 {
        return Err(Error::shape("metrics expect mono signals"));
    }
    let len = reference.len().min(estimate.len());
    if len == 0 {
        return Err(Error::Empty("signals do not overlap"));
    }
    let cut = |w: &Waveform| Waveform::mono(w.channel(0)[..len].to_vec(), w.sample_rate());
    Ok((cut(reference)?, cut(estimate)?))
}

/// Frame-wise distances over the overlapping span. Frames are `None` when
/// the reference is silent there.
pub fn cepstral_distance_frames(
    reference: &Waveform,
    estimate: &Waveform,
    cfg: &StftConfig,
) -> Result<Vec<Option<f64>>> {
    let (r, e) = trim_pair(reference, estimate)?;
    let ra = analyze_cepstra(&r, cfg)?;
    let ea = analyze_cepstra(&e, cfg)?;
    let peak = ra.energies.iter().copied().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(SILENCE_THRESHOLD_DB / 10.0);
    Ok(ra
        .cepstra
        .iter()
        .zip(&ea.cepstra)
        .zip(&ra.energies)
        .map(|((a, b), &energy)| (energy > floor).then(|| frame_distance(a, b)))
        .collect())
}

/// Mean frame distance over non-silent reference frames.
pub fn cepstral_distance(reference: &Waveform, estimate: &Waveform, cfg: &StftConfig) -> Result<f64> {
    let frames = cepstral_distance_frames(reference, estimate, cfg)?;
    let active: Vec<f64> = frames.iter().flatten().copied().collect();
    if active.is_empty() {
        return Err(Error::Empty("reference has no active frames"));
    }
    Ok(active.iter().sum::<f64>() / active.len() as f64)
}

/// Mean over 25 ms segments of `10 log10(P_ref / P_err)`, each clamped to
/// `[-10, 35]` dB.
pub fn segmental_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let (r, e) = trim_pair(reference, estimate)?;
    let seg = ((SEGMENT_SECS * r.sample_rate() as f64).round() as usize).clamp(1, r.len());
    let (x, y) = (r.channel(0), e.channel(0));
    let values: Vec<f64> = x
        .chunks_exact(seg)
        .zip(y.chunks_exact(seg))
        .map(|(a, b)| {
            let p_ref: f64 = a.iter().map(|v| v * v).sum();
            let p_err: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            let snr = if p_err == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (p_ref / p_err).log10()
            };
            snr.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        })
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub mode: String,
    pub cd: f64,
    pub seg_snr: f64,
}

/// Tab-separated report: a header, one row per utterance and mode, then one
/// `mean` row per mode in first-seen order.
pub fn format_report(rows: &[EvalRow]) -> String {
    let mut out = String::from("id\tmode\tcd\tsegsnr\n");
    let mut modes: Vec<&str> = Vec::new();
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}", r.id, r.mode, r.cd, r.seg_snr);
        if !modes.contains(&r.mode.as_str()) {
            modes.push(&r.mode);
        }
    }
    for mode in modes {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let n = sel.len() as f64;
        let cd = sel.iter().map(|r| r.cd).sum::<f64>() / n;
        let snr = sel.iter().map(|r| r.seg_snr).sum::<f64>() / n;
        let _ = writeln!(out, "mean\t{mode}\t{cd:.6}\t{snr:.6}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth_speech;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::mono((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn flat_spectrum_has_only_c0() {
        // An impulse under a rectangular window has a flat magnitude spectrum.
        let mut cfg = StftConfig::new(64, 64, 64).unwrap();
        cfg.window = crate::stft::Window::Rectangular;
        let mut x = vec![0.0; 64];
        x[0] = 0.25;
        let c = cepstral_frames(&Waveform::mono(x, 16_000).unwrap(), &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].0[0] - (0.25f64 + CEPSTRUM_LOG_FLOOR).ln()).abs() < 1e-12);
        assert!(c[0].0[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cepstra_match_direct_inverse_transform() {
        let cfg = StftConfig::new(64, 32, 64).unwrap();
        let w = noise(300, 3);
        let c = cepstral_frames(&w, &cfg).unwrap();
        let spec = analyze(&w, &cfg).unwrap();
        let n = 64;
        for f in 0..spec.frames() {
            let logmag: Vec<f64> = (0..n)
                .map(|k| {
                    let kk = if k <= n / 2 { k } else { n - k };
                    (spec.get(f, kk, 0).norm() + CEPSTRUM_LOG_FLOOR).ln()
                })
                .collect();
            for q in 0..NUM_CEPSTRA {
                let direct: f64 = logmag
                    .iter()
                    .enumerate()
                    .map(|(k, l)| l * (2.0 * std::f64::consts::PI * (k * q) as f64 / n as f64).cos())
                    .sum::<f64>()
                    / n as f64;
                assert!((c[f].0[q] - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gain_shifts_only_c0() {
        let cfg = StftConfig::default();
        let w = noise(4000, 4);
        let a = cepstral_frames(&w, &cfg).unwrap();
        let b = cepstral_frames(&w.scaled(3.0), &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.0[0] - x.0[0] - 3f64.ln()).abs() < 1e-6);
            for q in 1..NUM_CEPSTRA {
                assert!((y.0[q] - x.0[q]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn distance_properties() {
        let cfg = StftConfig::default();
        let a = synth_speech(0.8, 16_000, 1).unwrap();
        let b = noise(12_800, 2);
        assert_eq!(cepstral_distance(&a, &a, &cfg).unwrap(), 0.0);
        let ab = cepstral_distance(&a, &b, &cfg).unwrap();
        assert!(ab > 0.0);
        // Silent-frame selection follows the reference, so symmetry holds
        // frame by frame.
        let fa = cepstral_distance_frames(&a, &b, &cfg).unwrap();
        let fb = cepstral_distance_frames(&b, &a, &cfg).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            if let (Some(x), Some(y)) = (x, y) {
                assert_eq!(x, y);
            }
        }
        // Common gain cancels up to the log floor; noise keeps every bin far
        // above it.
        let c = noise(12_800, 3);
        let bc = cepstral_distance(&b, &c, &cfg).unwrap();
        let common = cepstral_distance(&b.scaled(0.3), &c.scaled(0.3), &cfg).unwrap();
        assert!((common - bc).abs() < 1e-6 * bc);
    }

    #[test]
    fn gain_mismatch_closed_form() {
        let cfg = StftConfig::default();
        let a = noise(8000, 5);
        let expect = 10.0 / LN_10 * 2f64.ln();
        for d in cepstral_distance_frames(&a, &a.scaled(2.0), &cfg).unwrap().into_iter().flatten() {
            assert!((d - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn metrics_reject_empty_overlap() {
        let cfg = StftConfig::default();
        let e = Waveform::mono(vec![], 16_000).unwrap();
        assert!(cepstral_distance(&e, &e, &cfg).is_err());
        assert!(segmental_snr(&e, &e).is_err());
    }

    #[test]
    fn segmental_snr_clamps_and_tracks_power_ratio() {
        let r = noise(16_000, 6);
        assert_eq!(segmental_snr(&r, &r).unwrap(), SEG_SNR_MAX_DB);
        let zeros = Waveform::zeros(1, 16_000, 16_000).unwrap();
        assert_eq!(segmental_snr(&r, &zeros).unwrap(), 0.0);
        assert_eq!(segmental_snr(&zeros, &r).unwrap(), SEG_SNR_MIN_DB);

        // Error equal to the reference scaled by 0.1 is exactly 20 dB per segment.
        let est = r.scaled(1.1);
        assert!((segmental_snr(&r, &est).unwrap() - 20.0).abs() < 1e-9);

        // Additive white noise: per-segment SNR scatters around the ratio.
        let n = noise(16_000, 7).scaled(0.1);
        let est = Waveform::mono(
            r.channel(0).iter().zip(n.channel(0)).map(|(a, b)| a + b).collect(),
            16_000,
        )
        .unwrap();
        let seg = segmental_snr(&r, &est).unwrap();
        assert!((seg - 20.0).abs() < 0.1, "{seg}");
    }

    #[test]
    fn report_has_means_per_mode() {
        let rows = vec![
            EvalRow { id: "a".into(), mode: "wpe".into(), cd: 1.0, seg_snr: 2.0 },
            EvalRow { id: "b".into(), mode: "wpe".into(), cd: 3.0, seg_snr: 4.0 },
            EvalRow { id: "a".into(), mode: "proposed".into(), cd: 0.5, seg_snr: 9.0 },
        ];
        let text = format_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 2);
        assert_eq!(lines[4], "mean\twpe\t2.000000\t3.000000");
    }
}
