use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;

use auscult_cli::commands::*;
use auscult_cli::config::{Config, IndexSource, InitKind, TaskKind};
use auscult_cli::manifest::{RunManifest, RUN_MANIFEST};
use auscult_cli::CliError;
use auscult_core::alignment::{LossKind, SHARED_DIM};
use auscult_core::reports::import_corpus;
use auscult_core::signal::load_wav;
use auscult_core::teacher::load_vectors;

fn tiny() -> Config {
    let text = r#"
[data]
classes = 4
subjects = 8
clips = 48
clip_seconds = 1.0

[encoder]
embed_dim = 32
blocks = 1
heads = 2
ffn_dim = 64
decoder_dim = 16
max_patches = 32

[align.train]
lr = 1e-3
epochs = 2
batch = 4
grad_accum = 1
warmup_steps = 2

[probe]
seeds = [0, 1, 2, 3, 4]
test_fraction = 0.25

[probe.config]
max_epochs = 20
"#;
    toml::from_str(text).unwrap()
}

fn gen(cfg: &Config, dir: &Path) {
    cmd_gen_data(cfg, dir).unwrap();
}

fn run_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(RUN_MANIFEST)).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_one_line_per_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    gen(&cfg, tmp.path());
    let text = fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(text.lines().count(), 48);
    let entries = import_corpus(&tmp.path().join(MANIFEST_FILE)).unwrap();
    assert!(entries.iter().all(|e| e.spectrogram_path.is_file()));
    let m = run_manifest(tmp.path());
    assert_eq!(m.command, "gen-data");
    assert!(m.artifacts.contains(&MANIFEST_FILE.to_string()));
}

#[test]
fn gen_data_is_seed_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny();
    gen(&cfg, a.path());
    gen(&cfg, b.path());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
    assert_eq!(read(a.path(), METADATA_FILE), read(b.path(), METADATA_FILE));
    for e in import_corpus(&a.path().join(MANIFEST_FILE)).unwrap() {
        let rel = e.spectrogram_path.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&e.spectrogram_path).unwrap(), read(b.path(), rel.to_str().unwrap()));
    }
    let mut other = cfg.clone();
    other.data.seed = 1;
    let c = tempfile::tempdir().unwrap();
    gen(&other, c.path());
    assert_ne!(read(a.path(), MANIFEST_FILE), read(c.path(), MANIFEST_FILE));
}

/// Mean log band power over 25 ms frames at `freq`, by the Goertzel recursion.
fn band_log_power(x: &[f64], sr: f64, freq: f64) -> f64 {
    let frame = 400;
    let w = 2.0 * PI * freq / sr;
    let coeff = 2.0 * w.cos();
    let mut total = 0.0;
    let mut frames = 0;
    for chunk in x.chunks_exact(frame) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for &v in chunk {
            let s0 = v + coeff * s1 - s2;
            s2 = s1;
            s1 = s0;
        }
        total += s1 * s1 + s2 * s2 - coeff * s1 * s2;
        frames += 1;
    }
    (total / frames as f64 + 1e-12).ln()
}

#[test]
fn class_conditional_spectra_differ() {
    // Statistics are computed from the WAV files with a Goertzel bank, not
    // the log-mel front end. Clips of one subject share its voice, so each
    // subject's mean profile is one sample. Under equal class means the squared
    // profile distance matches its summed variance (z near 1); every pair must
    // exceed z = 3.
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.data.subjects = 256;
    cfg.data.clips = 512;
    gen(&cfg, tmp.path());
    let entries = import_corpus(&tmp.path().join(MANIFEST_FILE)).unwrap();
    let freqs: Vec<f64> = (0..24).map(|i| 150.0 * 1.12f64.powi(i)).collect();
    let (names, labels) = class_indices(&entries);
    let mut by_subject: std::collections::BTreeMap<String, (usize, Vec<Vec<f64>>)> = Default::default();
    for (e, &l) in entries.iter().zip(&labels) {
        let w = load_wav(e.wav_path.as_ref().unwrap()).unwrap();
        let mut p: Vec<f64> = freqs.iter().map(|&f| band_log_power(w.samples(), 16_000.0, f)).collect();
        // Spectral shape only: recording gain shifts every band equally.
        let level = p.iter().sum::<f64>() / p.len() as f64;
        p.iter_mut().for_each(|v| *v -= level);
        by_subject.entry(e.subject_id.clone().unwrap()).or_insert((l, Vec::new())).1.push(p);
    }
    let mut profiles: Vec<Vec<Vec<f64>>> = vec![Vec::new(); names.len()];
    for (l, rows) in by_subject.into_values() {
        let n = rows.len() as f64;
        profiles[l].push((0..freqs.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect());
    }
    let stats: Vec<(Vec<f64>, Vec<f64>, f64)> = profiles
        .iter()
        .map(|rows| {
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..freqs.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let var: Vec<f64> = (0..freqs.len())
                .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0))
                .collect();
            (mean, var, n)
        })
        .collect();
    for a in 0..stats.len() {
        for b in a + 1..stats.len() {
            let (ma, va, na) = &stats[a];
            let (mb, vb, nb) = &stats[b];
            let dist2: f64 = ma.iter().zip(mb).map(|(x, y)| (x - y).powi(2)).sum();
            let se2: f64 = va.iter().zip(vb).map(|(x, y)| x / na + y / nb).sum();
            let z = (dist2 / se2).sqrt();
            assert!(z > 3.0, "{} vs {}: z = {z:.2}", names[a], names[b]);
        }
    }
}

#[test]
fn gen_data_rejects_unknown_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.data.dataset = "nope".into();
    assert!(matches!(cmd_gen_data(&cfg, tmp.path()), Err(CliError::Validation(_))));
}

#[test]
fn align_defaults_match_reference_constants() {
    let t = Config::default().align.train;
    assert_eq!(t.lr, 1e-5);
    assert_eq!(t.epochs, 50);
    assert_eq!(t.batch, 24);
    assert_eq!(t.grad_accum, 2);
    assert_eq!(t.warmup_steps, 400);
    assert_eq!((t.lambda_align, t.lambda_ssm), (1.0, 1.0));
}

#[test]
fn align_lists_every_problem_before_starting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    gen(&cfg, &tmp.path().join("data"));
    let mut bad = cfg.clone();
    bad.align.train.lambda_align = 0.0;
    bad.align.train.lambda_ssm = 0.0;
    bad.align.train.lr = 0.0;
    bad.align.init = InitKind::Checkpoint;
    let out = tmp.path().join("run");
    match cmd_align(&bad, &tmp.path().join("data").join(MANIFEST_FILE), &out) {
        Err(CliError::Validation(p)) => {
            assert_eq!(p.len(), 3, "{p:?}");
            assert!(p.iter().any(|m| m.contains("empty objective")));
        }
        other => panic!("expected validation error, got {:?}", other.map(|_| ())),
    }
    assert!(!out.exists(), "nothing is written before validation passes");
}

#[test]
fn align_embed_probe_zeroshot_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let (train_dir, test_dir) = (tmp.path().join("train"), tmp.path().join("test"));
    gen(&cfg, &train_dir);
    let mut eval_cfg = cfg.clone();
    eval_cfg.data.id_prefix = "test".into();
    eval_cfg.data.seed = 9;
    gen(&eval_cfg, &test_dir);
    let train_m = train_dir.join(MANIFEST_FILE);
    let test_m = test_dir.join(MANIFEST_FILE);

    let mut mse = cfg.clone();
    mse.align.train.loss_kind = LossKind::Mse;
    let run = tmp.path().join("align");
    let s = cmd_align(&mse, &train_m, &run).unwrap();
    assert_eq!(s.epoch_align_means.len(), 2);
    assert!(run.join("epoch_001.ckpt").is_file() && run.join("epoch_002.ckpt").is_file());
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), s.steps);
    let m = run_manifest(&run);
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256, auscult_cli::manifest::file_digest(&train_m).unwrap());
    let ckpt = run.join(FINAL_CHECKPOINT);

    // Embedding: one vector per line, shared space is 512 wide, bitwise repeatable.
    let (e1, e2) = (tmp.path().join("emb1"), tmp.path().join("emb2"));
    assert_eq!(cmd_embed(&cfg, &ckpt, &test_m, EmbedSpace::Shared, &e1).unwrap(), 48);
    cmd_embed(&cfg, &ckpt, &test_m, EmbedSpace::Shared, &e2).unwrap();
    assert_eq!(fs::read(e1.join(EMBEDDINGS_FILE)).unwrap(), fs::read(e2.join(EMBEDDINGS_FILE)).unwrap());
    let vectors = load_vectors(e1.join(EMBEDDINGS_FILE), None).unwrap();
    assert_eq!(vectors.len(), 48);
    assert!(vectors.iter().all(|(_, v)| v.len() == SHARED_DIM));
    let enc = tmp.path().join("emb_enc");
    cmd_embed(&cfg, &ckpt, &test_m, EmbedSpace::Encoder, &enc).unwrap();
    assert_eq!(load_vectors(enc.join(EMBEDDINGS_FILE), None).unwrap()[0].1.len(), 32);

    // Classification probe: five seeds, fixed CSV columns.
    let probe_dir = tmp.path().join("probe");
    let p = cmd_probe(&cfg, &e1.join(EMBEDDINGS_FILE), &test_m, &probe_dir).unwrap();
    assert_eq!(p.result.values.len(), 5);
    assert!(p.result.std.is_some());
    let csv = fs::read_to_string(probe_dir.join(RESULTS_CSV)).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "task,metric,mean,std,values");
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(4).unwrap().split(';').count(), 5);

    // Regression goes through leave-one-subject-out.
    let mut reg = cfg.clone();
    reg.probe.kind = TaskKind::Regression;
    reg.probe.task = "Age".into();
    reg.probe.seeds = vec![0];
    let r = cmd_probe(&reg, &e1.join(EMBEDDINGS_FILE), &test_m, &tmp.path().join("reg")).unwrap();
    assert_eq!(r.result.metric, "mae");
    assert!(r.result.mean.is_finite() && r.result.mean > 0.0);

    // Embeddings that do not match the manifest are refused.
    let err = cmd_probe(&cfg, &e1.join(EMBEDDINGS_FILE), &train_m, &tmp.path().join("bad"));
    assert!(matches!(err, Err(CliError::Validation(_))));

    // Zero-shot with both index sources; k defaults to 5.
    assert_eq!(cfg.zeroshot.k, 5);
    for src in [IndexSource::TrainAudio, IndexSource::Reports] {
        let mut z = cfg.clone();
        z.zeroshot.index_source = src;
        let out = tmp.path().join(format!("zs_{src:?}"));
        let s = cmd_zeroshot(&z, &ckpt, &train_m, &test_m, &out).unwrap();
        assert!((0.0..=1.0).contains(&s.auroc));
        assert_eq!(s.test, 48);
        assert_eq!(fs::read_to_string(out.join("predictions.jsonl")).unwrap().lines().count(), 48);
    }
    let leak = cmd_zeroshot(&cfg, &ckpt, &train_m, &train_m, &tmp.path().join("leak"));
    assert!(matches!(leak, Err(CliError::Validation(_))));
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_auscult");
    let tmp = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| {
        Command::new(exe)
            .args(args)
            .env("RUST_LOG", "error")
            .output()
            .unwrap()
            .status
            .code()
    };
    let out = tmp.path().join("d");
    let out = out.to_str().unwrap();
    assert_eq!(
        status(&["gen-data", "--out", out, "--clips", "8", "--subjects", "4", "--set", "data.clip_seconds=0.5"]),
        Some(0)
    );
    let manifest = format!("{out}/{MANIFEST_FILE}");
    assert_eq!(status(&["align", "--manifest", &manifest, "--out", out, "--no-align", "--no-ssm"]), Some(1));
    assert_eq!(status(&["gen-data", "--out", out, "--set", "data.bogus=1"]), Some(1));
    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(
        status(&["align", "--manifest", missing.to_str().unwrap(), "--out", out]),
        Some(2)
    );
}
