//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL line.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dnnwpe::manifest::{build_scene, SceneSource, SceneSpec};
use dnnwpe::metrics::{cepstral_distance, cepstral_distance_frames};
use dnnwpe::mlp::{
    rmsprop_step, FeatureMatrix, Gradients, MlpModel, Normalization, RmsPropState, Topology,
    TrainConfig, TrainingSet,
};
use dnnwpe::pipeline::{EnhanceMode, Enhancer, Reference};
use dnnwpe::scene::{make_mclp_scene, synth_speech};
use dnnwpe::stft::{analyze, synthesize};
use dnnwpe::wpe::{
    estimate_weights, iterative_wpe_traced, oneshot_wpe, predict_desired, RegressionWeights,
};
use dnnwpe::{Complex64, Mask, MaskEpsilon, Spectrogram, StftConfig, VarianceMap, Waveform, WpeConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn crandn(rng: &mut ChaCha8Rng) -> Complex64 {
    let n = rand_distr::StandardNormal;
    Complex64::new(rng.sample::<f64, _>(n), rng.sample::<f64, _>(n)) * std::f64::consts::FRAC_1_SQRT_2
}

fn scene_spec(seed: u64, seconds: f64, rt60: f64) -> SceneSpec {
    SceneSpec { source: SceneSource::Synth { seconds }, seed, rt60, snr_db: 10.0 }
}

fn stft_round_trip() -> Check {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(8_000..=48_000);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wav = Waveform::mono(x.clone(), 16_000).map_err(err)?;
        let y = synthesize(&analyze(&wav, &cfg).map_err(err)?, &cfg, 16_000).map_err(err)?;
        ensure(y.len() == len, || format!("length {} != {len}", y.len()))?;
        let interior = cfg.frame_len..len - cfg.frame_len;
        let e = interior
            .map(|i| (x[i] - y.channel(0)[i]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(e);
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-10, || format!("max error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("100 signals, max interior error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

/// Sparse desired spectrum: most entries are exactly zero, so with the
/// oracle variance those frames carry floor variance and pin the solution.
fn exact_model_case(channels: usize, order: usize, delay: usize, seed: u64) -> Result<(f64, f64), String> {
    let frames = 500;
    let cfg8 = StftConfig::new(16, 4, 16).map_err(err)?;
    let bins = cfg8.bins();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let desired = Spectrogram::from_fn(frames, 1, cfg8.clone(), |_, _, _| {
        if rng.random_bool(0.2) {
            crandn(&mut rng)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let others = (channels > 1).then(|| {
        Spectrogram::from_fn(frames, channels - 1, cfg8.clone(), |_, _, _| crandn(&mut rng))
    });
    let len = channels * order;
    let scale = 0.8 / len as f64;
    let g: Vec<Vec<Complex64>> = (0..bins)
        .map(|_| {
            (0..len)
                .map(|_| Complex64::from_polar(rng.random_range(0.0..scale), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let x = make_mclp_scene(&desired, others.as_ref(), &g, delay, order).map_err(err)?;
    let cfg = WpeConfig { order, delay, ..Default::default() };
    let var = VarianceMap::from_power(&desired, 0, cfg.variance_floor);
    let est = estimate_weights(&x, &var, &cfg).map_err(err)?;
    let truth = RegressionWeights::new(channels, order, delay, g).map_err(err)?;
    let d = oneshot_wpe(&x, &var, &cfg).map_err(err)?;
    Ok((est.max_abs_diff(&truth), d.max_abs_diff(&desired)))
}

fn exact_model_recovery() -> Check {
    let (mut wmax, mut dmax, mut cases) = (0.0f64, 0.0f64, 0);
    for channels in [1, 2] {
        for order in [1, 4, 15] {
            for delay in [1, 3] {
                let seed = (100 * channels + 10 * order + delay) as u64;
                let (we, de) = exact_model_case(channels, order, delay, seed)?;
                ensure(we < 1e-6 && de < 1e-6, || {
                    format!("M={channels} L={order} D={delay}: weight err {we:.2e}, residual {de:.2e}")
                })?;
                wmax = wmax.max(we);
                dmax = dmax.max(de);
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, max weight error {wmax:.2e}, max residual {dmax:.2e}"))
}

fn objective_monotonicity() -> Check {
    let stft = StftConfig::default();
    let ratio = 1e-6;
    let worst: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|i| -> Result<f64, String> {
            let rt60 = 0.3 + 0.5 * (i as f64 / 19.0);
            let scene = build_scene(&scene_spec(1000 + i, 2.0, rt60), 2).map_err(err)?;
            let x = analyze(&scene.mixture, &stft).map_err(err)?;
            let power = x.channel(0).data().iter().map(|c| c.norm_sqr()).sum::<f64>()
                / (x.frames() * x.bins()) as f64;
            let cfg = WpeConfig {
                iterations: 10,
                diag_load: 0.0,
                variance_floor: ratio * power,
                ..Default::default()
            };
            let trace = iterative_wpe_traced(&x, &cfg).map_err(err)?.objective_trace;
            ensure(trace.len() == 21, || format!("trace has {} entries", trace.len()))?;
            let mut rise = f64::NEG_INFINITY;
            for w in trace.windows(2) {
                let rel = (w[1] - w[0]) / w[0].abs();
                ensure(rel <= 1e-9, || format!("scene {i}: objective rose {} -> {}", w[0], w[1]))?;
                rise = rise.max(rel);
            }
            Ok(rise)
        })
        .collect::<Result<_, _>>()?;
    let max_rise = worst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!("20 scenes x 10 iterations, largest relative change {max_rise:+.2e}"))
}

/// Unweighted least squares via dense normal equations, coded directly.
fn ls_oracle(x: &Spectrogram, k: usize, order: usize, delay: usize) -> Vec<Complex64> {
    let (n_frames, m_ch) = (x.frames(), x.channels());
    let dim = m_ch * order;
    let mut a = DMatrix::<Complex64>::zeros(dim, dim);
    let mut b = DVector::<Complex64>::zeros(dim);
    for n in 0..n_frames {
        let v = DVector::from_iterator(
            dim,
            (0..m_ch).flat_map(|m| {
                (0..order).map(move |l| {
                    let back = delay + l;
                    if n >= back {
                        x.get(n - back, k, m)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
            }),
        );
        a += &v * v.adjoint();
        b += &v * x.get(n, k, 0).conj();
    }
    a.lu().solve(&b).expect("oracle system is regular").iter().copied().collect()
}

fn unweighted_ls_equivalence() -> Check {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg8 = StftConfig::new(16, 4, 16).map_err(err)?;
    let random = Spectrogram::from_fn(300, 2, cfg8, |_, _, _| crandn(&mut rng));
    let scene = build_scene(&scene_spec(44, 1.0, 0.5), 2).map_err(err)?;
    let real = analyze(&scene.mixture, &StftConfig::default()).map_err(err)?;
    for (x, order, delay) in [(&random, 4, 2), (&real, 15, 3), (&real, 5, 1)] {
        let cfg = WpeConfig { order, delay, diag_load: 0.0, ..Default::default() };
        let ones = VarianceMap::constant(x.frames(), x.bins(), 1.0).map_err(err)?;
        let est = estimate_weights(x, &ones, &cfg).map_err(err)?;
        for k in 0..x.bins() {
            let oracle = ls_oracle(x, k, order, delay);
            let num: f64 = est.bin(k).iter().zip(&oracle).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = oracle.iter().map(|b| b.norm_sqr()).sum();
            let rel = (num / den.max(f64::MIN_POSITIVE)).sqrt();
            ensure(rel < 1e-8, || format!("bin {k} (L={order}, D={delay}): relative error {rel:.2e}"))?;
            worst = worst.max(rel);
        }
        let oneshot = oneshot_wpe(x, &ones, &cfg).map_err(err)?;
        let direct = predict_desired(x, &est, &cfg).map_err(err)?;
        ensure(oneshot == direct, || "oneshot output differs from its own weights".into())?;
    }
    Ok(format!("3 configurations, max relative weight error {worst:.2e}"))
}

fn rel_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-4)
}

fn gradient_check() -> Check {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut params) = (0.0f64, 0usize);
    for trial in 0..12u64 {
        let bins = rng.random_range(1..=4);
        let input = rng.random_range(2..=9);
        let depth = rng.random_range(0..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=7)).collect();
        let rows = rng.random_range(1..=6);
        let mut model = MlpModel::with_dims(input, &hidden, bins, 0, 50 + trial).map_err(err)?;
        for layer in &mut model.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let feats = FeatureMatrix::new(
            rows,
            input,
            (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .map_err(err)?;
        let mut head = || Mask::new(rows, bins, 1, (0..rows * bins).map(|_| rng.random()).collect());
        let (tr, ts) = (head().map_err(err)?, head().map_err(err)?);
        let grads = model.backward(&feats, (&tr, &ts)).map_err(err)?;
        for li in 0..model.layers.len() {
            let nw = model.layers[li].weights.len();
            for pi in 0..nw + model.layers[li].bias.len() {
                let slot = |m: &mut MlpModel| -> *mut f64 {
                    let l = &mut m.layers[li];
                    if pi < nw {
                        &mut l.weights[pi]
                    } else {
                        &mut l.bias[pi - nw]
                    }
                };
                let p = slot(&mut model);
                // SAFETY: `p` points into `model`, which outlives these writes.
                let orig = unsafe { *p };
                unsafe { *p = orig + h };
                let up = model.loss(&feats, (&tr, &ts)).map_err(err)?;
                unsafe { *p = orig - h };
                let down = model.loss(&feats, (&tr, &ts)).map_err(err)?;
                unsafe { *p = orig };
                let fd = (up - down) / (2.0 * h);
                let g = &grads.layers[li];
                let an = if pi < nw { g.weights[pi] } else { g.bias[pi - nw] };
                let e = rel_error(an, fd);
                ensure(e < 1e-6, || {
                    format!("trial {trial} layer {li} param {pi}: analytic {an:e}, numeric {fd:e}")
                })?;
                worst = worst.max(e);
                params += 1;
            }
        }
    }
    Ok(format!("12 topologies, {params} parameters, max relative error {worst:.2e}"))
}

fn rmsprop_checks() -> Check {
    let cfg = TrainConfig { learning_rate: 1e-3, rho: 0.9, rms_eps: 1e-8, ..Default::default() };
    let mut model = MlpModel::with_dims(3, &[4], 2, 0, 7).map_err(err)?;
    let before = model.clone();
    let mut grads = Gradients {
        layers: model.layers.iter().map(|l| {
            let mut z = l.clone();
            z.weights.iter_mut().chain(z.bias.iter_mut()).for_each(|v| *v = 0.2);
            z
        }).collect(),
        loss: 0.0,
    };
    let mut state = RmsPropState::new(&model);
    rmsprop_step(&mut model, &grads, &mut state, &cfg).map_err(err)?;
    let expect = -1e-3 * 0.2 / ((0.1f64 * 0.04).sqrt() + 1e-8);
    ensure((expect + 3.162277e-3).abs() < 1e-9, || format!("closed form gives {expect:e}"))?;
    let mut worst = 0.0f64;
    for (a, b) in model.layers.iter().zip(&before.layers) {
        for (x, y) in a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias)) {
            worst = worst.max(((x - y) - expect).abs());
        }
    }
    ensure(worst < 1e-9, || format!("step deviates from hand value by {worst:e}"))?;

    for l in &mut grads.layers {
        l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = 0.0);
    }
    let mut fresh = before.clone();
    let mut fresh_state = RmsPropState::new(&fresh);
    rmsprop_step(&mut fresh, &grads, &mut fresh_state, &cfg).map_err(err)?;
    ensure(fresh == before, || "zero gradient moved the parameters".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (rows, bins, cols) = (120, 3, 5);
    let feats = FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .map_err(err)?;
    let targets: Vec<f64> = (0..rows * 2 * bins).map(|_| rng.random()).collect();
    let set = TrainingSet::from_parts(feats, targets, bins).map_err(err)?;
    let topo = Topology { hidden: vec![8, 8], context: 0 };
    let tcfg = TrainConfig { epochs: 4, batch_size: 16, seed: 9, ..Default::default() };
    let a = dnnwpe::mlp::train_on_set(&set, &tcfg, &topo).map_err(err)?;
    let b = dnnwpe::mlp::train_on_set(&set, &tcfg, &topo).map_err(err)?;
    let same = a.model == b.model
        && a.epoch_losses.iter().map(|v| v.to_bits()).eq(b.epoch_losses.iter().map(|v| v.to_bits()));
    ensure(same, || "same seed gave different models".into())?;
    let c = dnnwpe::mlp::train_on_set(&set, &TrainConfig { seed: 10, ..tcfg }, &topo).map_err(err)?;
    ensure(c.model != a.model, || "different seeds gave identical models".into())?;
    Ok(format!("hand step {expect:.9e} matched to {worst:.1e}; zero-grad and seeded runs exact"))
}

fn oracle_pipeline() -> Check {
    let start = Instant::now();
    let stft = StftConfig::default();
    let wpe = WpeConfig::default();
    let scores: Vec<[f64; 3]> = (0..50u64)
        .into_par_iter()
        .map(|i| -> Result<[f64; 3], String> {
            let rt60 = 0.3 + 0.5 * (i as f64 / 49.0);
            let scene = build_scene(&scene_spec(2000 + i, 2.0, rt60), 2).map_err(err)?;
            let clean = scene.clean.select(0);
            let reference = Reference { clean: &scene.clean, reverberant: &scene.reverberant };
            let cd = |y: &Waveform| cepstral_distance(&clean, y, &stft).map_err(err);
            let mix = cd(&scene.mixture.select(0))?;
            let oracle = Enhancer::new(EnhanceMode::OneshotOracle, wpe.clone(), stft.clone())
                .enhance_with_reference(&scene.mixture, Some(reference))
                .map_err(err)?;
            let iterative = Enhancer::new(EnhanceMode::Wpe, wpe.clone(), stft.clone())
                .enhance(&scene.mixture)
                .map_err(err)?;
            Ok([mix, cd(&oracle)?, cd(&iterative)?])
        })
        .collect::<Result<_, _>>()?;
    let elapsed = start.elapsed();
    let mean = |j: usize| scores.iter().map(|s| s[j]).sum::<f64>() / scores.len() as f64;
    let (mix, oracle, wpe_cd) = (mean(0), mean(1), mean(2));
    let wins = scores.iter().filter(|s| s[1] < s[0]).count();
    let summary = format!(
        "mean CD mixture {mix:.3}, wpe {wpe_cd:.3}, oracle {oracle:.3}; wins {wins}/50; {:.1}s",
        elapsed.as_secs_f64()
    );
    ensure(oracle < mix && oracle < wpe_cd, || summary.clone())?;
    ensure(wins * 10 >= 9 * scores.len(), || summary.clone())?;
    ensure(elapsed < Duration::from_secs(300), || summary.clone())?;
    Ok(summary)
}

fn mask_mse(model: &MlpModel, set: &TrainingSet, features: &FeatureMatrix) -> Result<f64, String> {
    let out = model.forward_raw(features).map_err(err)?;
    Ok(out.iter().zip(&set.targets).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64)
}

fn desk_training() -> Check {
    let stft = StftConfig::default();
    let topo = Topology { hidden: vec![64, 64, 64], context: 2 };
    let scenes = |base: u64, count: u64| -> Result<Vec<_>, String> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let rt60 = 0.3 + 0.5 * ((i * 7 % count) as f64 / (count - 1).max(1) as f64);
                build_scene(&scene_spec(base + i, 2.0, rt60), 1).map_err(err)
            })
            .collect()
    };
    let train_scenes = scenes(3000, 20)?;
    let held_out = scenes(4000, 5)?;
    let cfg = TrainConfig { epochs: 20, seed: 3, ..Default::default() };
    let set = TrainingSet::from_scenes(&train_scenes, &stft, topo.context, MaskEpsilon::default())
        .map_err(err)?;
    let report = dnnwpe::mlp::train_on_set(&set, &cfg, &topo).map_err(err)?;
    let losses = &report.epoch_losses;
    let pairs = losses.len() - 1;
    let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();

    let mut untrained = MlpModel::with_dims(set.features.cols(), &topo.hidden, set.bins, topo.context, cfg.seed)
        .map_err(err)?;
    untrained.norm = Normalization::fit(&set.features).map_err(err)?;
    let test = TrainingSet::from_scenes(&held_out, &stft, topo.context, MaskEpsilon::default()).map_err(err)?;
    let test_feats = report.model.norm.apply(&test.features).map_err(err)?;
    let trained_mse = mask_mse(&report.model, &test, &test_feats)?;
    let untrained_mse = mask_mse(&untrained, &test, &test_feats)?;
    let summary = format!(
        "loss {:.4} -> {:.4}, {decreasing}/{pairs} epochs decreased; held-out mask MSE {trained_mse:.4} vs untrained {untrained_mse:.4}",
        losses[0],
        losses[pairs]
    );
    ensure(decreasing * 100 >= 95 * pairs, || summary.clone())?;
    ensure(trained_mse * 2.0 <= untrained_mse, || summary.clone())?;
    Ok(summary)
}

fn runtime_structure() -> Check {
    let stft = StftConfig::default();
    let wpe = WpeConfig::default();
    let scene = build_scene(&scene_spec(5000, 10.0, 0.6), 2).map_err(err)?;
    let reference = Reference { clean: &scene.clean, reverberant: &scene.reverberant };
    let oneshot = Enhancer::new(EnhanceMode::OneshotOracle, wpe.clone(), stft.clone());
    let iterative = Enhancer::new(EnhanceMode::Wpe, wpe.clone(), stft.clone());
    let (_, t1) = oneshot.time_enhance(&scene.mixture, Some(reference)).map_err(err)?;
    let (_, t5) = iterative.time_enhance(&scene.mixture, None).map_err(err)?;
    let bins = stft.bins();
    ensure(t1.weight_solves == bins, || format!("oneshot solved {} bins", t1.weight_solves))?;
    ensure(t5.weight_solves == 5 * bins, || format!("iterative solved {} bins", t5.weight_solves))?;
    let summary = format!(
        "solves {} vs {}; solve time {:.3}s vs {:.3}s",
        t1.weight_solves,
        t5.weight_solves,
        t1.weight_solve.as_secs_f64(),
        t5.weight_solve.as_secs_f64()
    );
    ensure(t1.weight_solve < t5.weight_solve, || summary.clone())?;
    Ok(summary)
}

fn cd_closed_form() -> Check {
    let stft = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..24_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let a = Waveform::mono(x.clone(), 16_000).map_err(err)?;
    let b = Waveform::mono(x.iter().map(|v| 2.0 * v).collect(), 16_000).map_err(err)?;
    let expect = 10.0 / std::f64::consts::LN_10 * 2f64.ln();
    let frames = cepstral_distance_frames(&a, &b, &stft).map_err(err)?;
    let mut worst = 0.0f64;
    for (i, f) in frames.iter().enumerate() {
        let d = f.ok_or_else(|| format!("frame {i} unexpectedly silent"))?;
        worst = worst.max((d - expect).abs());
    }
    ensure(worst < 1e-6, || format!("gain-2 frame CD off by {worst:e}"))?;
    let same = cepstral_distance(&a, &a, &stft).map_err(err)?;
    ensure(same == 0.0, || format!("identical signals gave {same:e}"))?;
    let speech = synth_speech(1.5, 16_000, 3).map_err(err)?;
    let self_cd = cepstral_distance(&speech, &speech, &stft).map_err(err)?;
    ensure(self_cd == 0.0, || format!("identical speech gave {self_cd:e}"))?;
    Ok(format!("{} frames at {expect:.7} (max dev {worst:.1e}); identical = 0", frames.len()))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 10] = [
        ("stft round trip", stft_round_trip),
        ("exact-model WPE recovery", exact_model_recovery),
        ("objective monotonicity", objective_monotonicity),
        ("unweighted LS equivalence", unweighted_ls_equivalence),
        ("MLP gradient check", gradient_check),
        ("RMSprop correctness", rmsprop_checks),
        ("oracle pipeline improvement", oracle_pipeline),
        ("desk-scale training", desk_training),
        ("runtime structure", runtime_structure),
        ("CD closed form", cd_closed_form),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
