use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use dnnwpe::audio::Waveform;
use dnnwpe::cli::{run, Cli, Command as Sub};
use dnnwpe::mlp::MlpModel;
use dnnwpe::scene::measured_snr_db;

const BIN: &str = env!("CARGO_BIN_EXE_dnnwpe");

fn dnnwpe(args: &[&str]) -> anyhow::Result<()> {
    run(std::iter::once("dnnwpe").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_manifest(dir: &Path, lines: &str) -> std::path::PathBuf {
    let path = dir.join("scenes.txt");
    fs::write(&path, lines).unwrap();
    path
}

#[test]
fn enhance_defaults() {
    let cli = Cli::try_parse_from(["dnnwpe", "enhance", "--input", "a.wav", "--out", "b.wav"]).unwrap();
    let Sub::Enhance(a) = cli.command else { panic!("wrong subcommand") };
    assert_eq!((a.dsp.order, a.dsp.delay, a.dsp.iterations), (15, 3, 5));
    assert_eq!(a.mode, "proposed");
    let stft = a.dsp.stft().unwrap();
    assert_eq!((stft.frame_len, stft.hop, stft.dft_len), (800, 160, 800));
}

#[test]
fn unknown_flags_and_modes_are_rejected() {
    assert!(Cli::try_parse_from(["dnnwpe", "enhance", "--input", "a", "--out", "b", "--ordr", "3"]).is_err());
    assert!(Cli::try_parse_from(["dnnwpe", "enhance", "--input", "a", "--out", "b", "--mode", "x"]).is_err());
    let out = Command::new(BIN).args(["simulate", "--out-dir", "x", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn simulate_writes_triplets_at_the_requested_snr() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        "# five scenes\nsynth:0.5 1 0.3 10\nsynth:0.5 2 0.4 10\nsynth:0.5 3 0.5 5\nsynth:0.5 4 0.6 10\nsynth:0.5 5 0.7 20\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        dnnwpe(&["simulate", "--manifest", p(&manifest), "--out-dir", p(out)]).unwrap();
    }
    let wavs: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
        .collect();
    assert_eq!(wavs.len(), 15);
    for w in &wavs {
        let name = w.file_name();
        assert_eq!(fs::read(w.path()).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    for (i, snr) in [10.0, 10.0, 5.0, 10.0, 20.0].into_iter().enumerate() {
        let mix = Waveform::read_wav(a.join(format!("scene{i:04}_mixture.wav"))).unwrap();
        let rev = Waveform::read_wav(a.join(format!("scene{i:04}_reverberant.wav"))).unwrap();
        let noise = Waveform::new(
            mix.channels()
                .iter()
                .zip(rev.channels())
                .map(|(m, r)| m.iter().zip(r).map(|(x, y)| x - y).collect())
                .collect(),
            16_000,
        )
        .unwrap();
        let measured = measured_snr_db(&rev, &noise);
        assert!((measured - snr).abs() < 0.1, "scene {i}: {measured}");
    }
    assert!(a.join("run.manifest").exists());
}

#[test]
fn simulate_fails_on_unwritable_directory() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let out = file.join("sub");
    assert!(dnnwpe(&["simulate", "--count", "1", "--out-dir", p(&out)]).is_err());
}

#[test]
fn train_enhance_eval_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = write_manifest(d, "synth:0.6 1 0.3 10\nsynth:0.6 2 0.6 10\n");
    let model = d.join("model.bin");
    let train_args = [
        "train", "--manifest", p(&manifest), "--out", p(&model), "--epochs", "3", "--hidden", "16,16",
        "--seed", "4",
    ];
    dnnwpe(&train_args).unwrap();
    let csv = fs::read_to_string(d.join("model.bin.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    let first_model = fs::read(&model).unwrap();
    dnnwpe(&train_args).unwrap();
    assert_eq!(fs::read_to_string(d.join("model.bin.loss.csv")).unwrap(), csv);
    assert_eq!(fs::read(&model).unwrap(), first_model);
    let loaded = MlpModel::load_file(&model).unwrap();
    let again = MlpModel::load(first_model.as_slice()).unwrap();
    assert_eq!(loaded, again);

    let sim = d.join("sim");
    dnnwpe(&["simulate", "--manifest", p(&manifest), "--out-dir", p(&sim)]).unwrap();
    let input = sim.join("scene0000_mixture.wav");
    let out = d.join("y.wav");
    for mode in ["wpe", "proposed", "wpe-mask"] {
        dnnwpe(&[
            "enhance", "--input", p(&input), "--out", p(&out), "--mode", mode, "--model", p(&model),
            "--order", "8",
        ])
        .unwrap();
        let x = Waveform::read_wav(&input).unwrap();
        let y = Waveform::read_wav(&out).unwrap();
        assert_eq!((y.num_channels(), y.len()), (1, x.len()), "{mode}");
    }
    let first = fs::read(&out).unwrap();
    fs::remove_file(&out).unwrap();
    dnnwpe(&["rerun", p(&d.join("y.wav.manifest"))]).unwrap();
    assert_eq!(fs::read(&out).unwrap(), first);

    let ev = d.join("eval");
    dnnwpe(&[
        "eval", "--manifest", p(&manifest), "--out-dir", p(&ev), "--modes", "mixture,wpe,oracle,proposed",
        "--model", p(&model), "--spectrograms", "--order", "8",
    ])
    .unwrap();
    let report = fs::read_to_string(ev.join("report.tsv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).filter(|l| !l.starts_with("mean")).collect();
    assert_eq!(rows.len(), 2 * 4);
    let timing = fs::read_to_string(ev.join("timing.tsv")).unwrap();
    assert_eq!(timing.lines().count(), 1 + 2 * 3);
    for line in timing.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let solve: f64 = cols[4].parse().unwrap();
        let total: f64 = cols[7].parse().unwrap();
        assert!(solve > 0.0 && total > 0.0, "{line}");
    }
    let mean = |mode: &str| -> f64 {
        let line = report.lines().find(|l| l.starts_with(&format!("mean\t{mode}\t"))).unwrap();
        line.split('\t').nth(2).unwrap().parse().unwrap()
    };
    assert!(mean("oracle") <= mean("wpe"));
    assert!(ev.join("scene0001_oracle.png").exists());
    assert!(image_dims(&ev.join("scene0000_clean.png")).1 == 401);
}

fn image_dims(path: &Path) -> (u32, u32) {
    let bytes = fs::read(path).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (w, h)
}

#[test]
fn binary_reports_missing_model_and_bad_audio() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bad.wav");
    fs::write(&bogus, b"not a wav").unwrap();
    let out = dir.path().join("o.wav");
    let run = |mode: &str| {
        Command::new(BIN)
            .env_remove("DNNWPE_MODEL")
            .args(["enhance", "--input", p(&bogus), "--out", p(&out), "--mode", mode])
            .output()
            .unwrap()
    };
    let r = run("wpe");
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("error"));

    let wav = dir.path().join("ok.wav");
    Waveform::mono(vec![0.1; 4000], 16_000).unwrap().write_wav(&wav).unwrap();
    let r = Command::new(BIN)
        .env_remove("DNNWPE_MODEL")
        .args(["enhance", "--input", p(&wav), "--out", p(&out)])
        .output()
        .unwrap();
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("model"));
}

#[test]
fn train_rejects_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), "# nothing\n");
    let err = dnnwpe(&["train", "--manifest", p(&manifest), "--out", p(&dir.path().join("m"))]).unwrap_err();
    assert!(err.to_string().contains("no scenes"));
}
