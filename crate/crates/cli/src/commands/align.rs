use std::path::{Path, PathBuf};

use auscult_core::alignment::{train, TrainItem};
use auscult_core::encoder::{init_params, write_checkpoint, InitMode};
use auscult_core::reports::{ManifestEntry, SchemaRegistry};
use auscult_core::signal::load_wav;
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, load_spectrograms, read_manifest, write_json};
use crate::config::{Config, InitKind};
use crate::manifest::RunRecorder;
use crate::CliError;

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignSummary {
    pub items: usize,
    pub steps: usize,
    pub epoch_align_means: Vec<Option<f64>>,
    pub epoch_ssm_means: Vec<Option<f64>>,
    pub checkpoint: PathBuf,
}

fn keep(entry: &ManifestEntry, filter: &str, registry: &SchemaRegistry) -> bool {
    if entry.dataset.eq_ignore_ascii_case(filter) {
        return true;
    }
    registry.get(&entry.dataset).is_ok_and(|s| {
        serde_json::to_value(s.modality)
            .ok()
            .and_then(|v| v.as_str().map(|m| m.eq_ignore_ascii_case(filter)))
            .unwrap_or(false)
    })
}

/// Trains on the manifest's pairs and writes `metrics.jsonl`, per-epoch
/// checkpoints, `final.ckpt` and `summary.json` into `out`.
pub fn cmd_align(cfg: &Config, manifest: &Path, out: &Path) -> Result<AlignSummary, CliError> {
    let settings = &cfg.align;
    let tc = &settings.train;
    let mut entries = read_manifest(manifest)?;
    if let Some(filter) = &settings.corpus_filter {
        let registry = SchemaRegistry::default();
        entries.retain(|e| keep(e, filter, &registry));
    }

    let mut problems = Vec::new();
    if let Err(e) = cfg.encoder.validate() {
        problems.push(e.to_string());
    }
    problems.extend(tc.problems(entries.len(), cfg.encoder.blocks));
    let init_path = match settings.init {
        InitKind::Random => None,
        InitKind::Checkpoint => match &settings.init_checkpoint {
            Some(p) if p.is_file() => Some(p.clone()),
            Some(p) => {
                problems.push(format!("init checkpoint {} not found", p.display()));
                None
            }
            None => {
                problems.push("init = \"checkpoint\" needs align.init_checkpoint".into());
                None
            }
        },
    };
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }

    let teacher = cfg.teacher.build()?;
    let mut recorder = RunRecorder::start("align", cfg, tc.seed);
    recorder.input(manifest)?;
    let mode = match &init_path {
        Some(p) => {
            recorder.input(p)?;
            InitMode::FromCheckpoint(p.clone())
        }
        None => InitMode::Random,
    };
    let encoder = init_params(&cfg.encoder, tc.seed, mode)?;

    let spectrograms = load_spectrograms(&entries)?;
    let waveforms = entries
        .par_iter()
        .map(|e| match (&e.wav_path, tc.augment) {
            (Some(p), true) => load_wav(p)
                .map(Some)
                .map_err(|err| CliError::Runtime(format!("{}: {}: {err}", e.audio_id, p.display()))),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let corpus: Vec<TrainItem> = entries
        .iter()
        .zip(spectrograms)
        .zip(waveforms)
        .map(|((e, spectrogram), waveform)| TrainItem {
            id: e.audio_id.clone(),
            spectrogram,
            waveform,
            report: e.report.clone(),
        })
        .collect();

    create_dir(out)?;
    log::info!(
        "align: {} items, {} steps, lambda_align {} lambda_ssm {}",
        corpus.len(),
        tc.total_steps(corpus.len()),
        tc.lambda_align,
        tc.lambda_ssm
    );
    let outcome = train(tc, &corpus, encoder, teacher.as_ref(), Some(out))?;
    write_checkpoint(out.join(FINAL_CHECKPOINT), &outcome.model.to_checkpoint())?;

    let summary = AlignSummary {
        items: corpus.len(),
        steps: outcome.metrics.len(),
        epoch_align_means: outcome.epoch_align_means,
        epoch_ssm_means: outcome.epoch_ssm_means,
        checkpoint: PathBuf::from(FINAL_CHECKPOINT),
    };
    write_json(&out.join("summary.json"), &summary)?;
    recorder.artifact("metrics.jsonl");
    recorder.artifact(FINAL_CHECKPOINT);
    recorder.artifact("summary.json");
    for epoch in 0..tc.epochs {
        recorder.artifact(format!("epoch_{:03}.ckpt", epoch + 1));
    }
    recorder.finish(out)?;
    Ok(summary)
}
