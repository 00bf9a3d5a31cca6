use auscult_core::alignment::{
    adamw_step, train, AdamState, AdamWConfig, LossKind, TrainConfig, TrainItem, TrainedModel,
};
use auscult_core::encoder::{
    forward, init_params, prepare_patches, ssm_loss, ssm_loss_on_tape, EncoderConfig, InitMode, PatchMask,
};
use auscult_core::numerics::{Matrix, Tape};
use auscult_core::signal::Spectrogram;
use auscult_core::teacher::HashEmbedder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        patch_h: 4,
        patch_w: 4,
        embed_dim: 16,
        blocks: 2,
        heads: 2,
        mask_ratio: 0.5,
        decoder_dim: 16,
        ffn_dim: 32,
        max_patches: 32,
        input_mean: 0.0,
        input_std: 1.0,
    }
}

/// Two classes with distinct spectral bands and matching report words.
fn corpus(n: usize, seed: u64) -> Vec<TrainItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 2;
            let mut m = Matrix::random_normal(16, 8, &mut rng).scale(0.3);
            for t in 0..16 {
                let c = if class == 0 { 1 } else { 6 };
                m.set(t, c, m.get(t, c) + 2.0);
            }
            let report = if class == 0 {
                format!("Wheezes are present. Patient {i} is stable.")
            } else {
                format!("Crackles are present. Patient {i} is stable.")
            };
            TrainItem {
                id: format!("clip{i}"),
                spectrogram: Spectrogram::new(m).unwrap(),
                waveform: None,
                report,
            }
        })
        .collect()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 6,
        warmup_steps: 2,
        batch: 8,
        grad_accum: 2,
        augment: false,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn teacher() -> HashEmbedder {
    HashEmbedder { dim: 64, seed: 0 }
}

#[test]
fn same_seed_same_metrics() {
    let data = corpus(32, 1);
    let enc = init_params(&tiny_encoder(), 7, InitMode::Random).unwrap();
    let a = train(&quick_cfg(), &data, enc.clone(), &teacher(), None).unwrap();
    let b = train(&quick_cfg(), &data, enc, &teacher(), None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model, b.model);
    assert_eq!(a.metrics.len(), 6 * 2);
}

#[test]
fn alignment_loss_drops_on_correlated_corpus() {
    let data = corpus(48, 2);
    let enc = init_params(&tiny_encoder(), 8, InitMode::Random).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        ..quick_cfg()
    };
    let out = train(&cfg, &data, enc, &teacher(), None).unwrap();
    let first = out.epoch_align_means[0].unwrap();
    let last = out.epoch_align_means.last().unwrap().unwrap();
    assert!(last <= 0.5 * first, "first {first} last {last}");
}

#[test]
fn no_align_run_trains_only_on_reconstruction() {
    let data = corpus(32, 3);
    let enc = init_params(&tiny_encoder(), 9, InitMode::Random).unwrap();
    let cfg = TrainConfig {
        lambda_align: 0.0,
        ..quick_cfg()
    };
    let out = train(&cfg, &data, enc.clone(), &teacher(), None).unwrap();
    assert!(out.metrics.iter().all(|m| m.align_loss.is_none() && m.ssm_loss.is_some()));
    assert_ne!(out.model.encoder, enc);
    // Heads never receive a gradient, so they keep their initial values.
    let fresh = TrainedModel::with_new_heads(enc, &[2], 64, 0.2, cfg.seed).unwrap();
    assert_eq!(out.model.language_head, fresh.language_head);
}

#[test]
fn empty_objective_and_small_corpus_are_rejected() {
    let data = corpus(8, 4);
    let enc = init_params(&tiny_encoder(), 1, InitMode::Random).unwrap();
    let cfg = TrainConfig {
        lambda_align: 0.0,
        lambda_ssm: 0.0,
        ..quick_cfg()
    };
    let err = train(&cfg, &data, enc, &teacher(), None).err().unwrap().to_string();
    assert!(err.contains("empty objective"), "{err}");
    assert!(err.contains("smaller than one step"), "{err}");
}

#[test]
fn multi_layer_and_mse_variants_run() {
    let data = corpus(32, 5);
    let enc = init_params(&tiny_encoder(), 2, InitMode::Random).unwrap();
    let cfg = TrainConfig {
        align_layers: vec![1, 2],
        loss_kind: LossKind::Mse,
        epochs: 2,
        ..quick_cfg()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train(&cfg, &data, enc, &teacher(), Some(dir.path())).unwrap();
    assert_eq!(out.model.audio_heads.len(), 2);
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), out.metrics.len());
    for key in ["\"step\"", "\"lr\"", "\"align_loss\"", "\"ssm_loss\"", "\"total_loss\"", "\"cka\""] {
        assert!(lines.lines().next().unwrap().contains(key));
    }
    let ckpt = auscult_core::encoder::read_checkpoint(dir.path().join("epoch_002.ckpt")).unwrap();
    let back = TrainedModel::from_checkpoint(&ckpt, 0.2).unwrap();
    assert_eq!(back, out.model);
    assert_eq!(back.embed_shared(&data[0].spectrogram).unwrap().len(), 512);
}

#[test]
fn teacher_inputs_never_get_gradients() {
    let mut tape = Tape::new();
    let t = tape.constant(Matrix::filled(2, 3, 0.5));
    let w_val = Matrix::filled(3, 1, 1.0);
    let w = tape.param("w", &w_val).unwrap();
    let y = tape.matmul(t, w).unwrap();
    let loss = tape.mean_all(y).unwrap();
    let report = tape.backward(loss).unwrap();
    assert_eq!(report.grads.len(), 1);
    assert_eq!(report.grads[0].0, "w");
}

#[test]
fn ssm_training_halves_the_loss_in_200_steps() {
    let cfg = tiny_encoder();
    let mut p = init_params(&cfg, 4, InitMode::Random).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<(Matrix, PatchMask)> = (0..4)
        .map(|_| {
            let spec = Spectrogram::new(Matrix::random_normal(16, 8, &mut rng)).unwrap();
            let (patches, _) = prepare_patches(&spec, &cfg).unwrap();
            let mask = PatchMask::random(patches.rows(), cfg.mask_ratio, &mut rng).unwrap();
            (patches, mask)
        })
        .collect();
    let eval = |p: &auscult_core::encoder::EncoderParams| -> f64 {
        batch
            .iter()
            .map(|(x, m)| ssm_loss(forward(p, x, m, true).unwrap().recon.as_ref().unwrap(), x, m).unwrap())
            .sum::<f64>()
            / batch.len() as f64
    };
    let initial = eval(&p);
    let mut state = AdamState::new();
    let opt = AdamWConfig::default();
    for _ in 0..200 {
        let mut tape = Tape::new();
        let enc = p.bind(&mut tape, true).unwrap();
        let mut total = None;
        for (x, m) in &batch {
            let out = enc.forward_masked(&mut tape, x, m, true).unwrap();
            let l = ssm_loss_on_tape(&mut tape, out.recon.unwrap(), x, m).unwrap();
            total = Some(match total {
                Some(t) => tape.add(t, l).unwrap(),
                None => l,
            });
        }
        let report = tape.backward(total.unwrap()).unwrap();
        let grads: Vec<_> = report.grads.into_iter().filter(|(n, _)| !report.disconnected.contains(n)).collect();
        drop(enc);
        drop(tape);
        adamw_step(&mut p.params, &grads, &mut state, 3e-3, &opt).unwrap();
    }
    let fin = eval(&p);
    assert!(fin <= 0.5 * initial, "initial {initial} final {fin}");
}
