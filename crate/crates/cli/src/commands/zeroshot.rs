use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use auscult_core::alignment::TrainedModel;
use auscult_core::encoder::read_checkpoint;
use auscult_core::eval::{auroc_macro, write_results_csv, EvalResult};
use auscult_core::numerics::Matrix;
use auscult_core::reports::ManifestEntry;
use auscult_core::retrieval::{build_index, save_report_index, VectorIndex, ZeroShot, ZeroShotConfig};
use auscult_core::teacher::TextEmbedder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::embed::{embed_entries, EmbedSpace};
use super::{create_dir, read_manifest, write_json, RESULTS_CSV};
use crate::config::{Config, IndexSource, ZeroShotSettings};
use crate::manifest::RunRecorder;
use crate::CliError;

pub const ZEROSHOT_JSON: &str = "zeroshot.json";
pub const INDEX_FILE: &str = "index.acemb";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroShotSummary {
    pub auroc: f64,
    pub accuracy: f64,
    pub k: usize,
    pub index_source: IndexSource,
    pub shuffle_reports: bool,
    pub class_names: Vec<String>,
    pub train: usize,
    pub test: usize,
}

/// Refuses train and test sets that share clip ids.
pub fn leakage_check(train: &[ManifestEntry], test: &[ManifestEntry]) -> Result<(), CliError> {
    let ids: BTreeSet<&str> = train.iter().map(|e| e.audio_id.as_str()).collect();
    let shared: Vec<String> = test
        .iter()
        .filter(|e| ids.contains(e.audio_id.as_str()))
        .map(|e| e.audio_id.clone())
        .collect();
    if shared.is_empty() {
        return Ok(());
    }
    let shown = shared.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    Err(CliError::invalid(format!(
        "train and test share {} clip ids ({shown}{})",
        shared.len(),
        if shared.len() > 5 { ", ..." } else { "" }
    )))
}

/// `id -> report` for the train clips, permuted across clips when
/// `shuffle` is set.
fn report_texts(train: &[ManifestEntry], settings: &ZeroShotSettings) -> BTreeMap<String, String> {
    let mut reports: Vec<String> = train.iter().map(|e| e.report.clone()).collect();
    if settings.shuffle_reports {
        reports.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    }
    train.iter().map(|e| e.audio_id.clone()).zip(reports).collect()
}

fn build_retrieval_index(
    model: &TrainedModel,
    train: &[ManifestEntry],
    texts: &BTreeMap<String, String>,
    source: IndexSource,
    teacher: &dyn TextEmbedder,
) -> Result<VectorIndex, CliError> {
    let entries = match source {
        IndexSource::TrainAudio => embed_entries(model, train, EmbedSpace::Shared)?,
        IndexSource::Reports => {
            let ids: Vec<&String> = texts.keys().collect();
            let rows = ids
                .par_iter()
                .map(|id| Ok(teacher.embed(&texts[*id])?.vector))
                .collect::<Result<Vec<_>, CliError>>()?;
            let projected = model.project_text(&Matrix::from_rows(&rows)?)?;
            ids.iter()
                .enumerate()
                .map(|(i, id)| ((*id).clone(), projected.row(i).to_vec()))
                .collect()
        }
    };
    Ok(build_index(entries)?)
}

/// Retrieval-based zero-shot classification of the test clips.
pub fn cmd_zeroshot(
    cfg: &Config,
    checkpoint: &Path,
    train_manifest: &Path,
    test_manifest: &Path,
    out: &Path,
) -> Result<ZeroShotSummary, CliError> {
    let settings = &cfg.zeroshot;
    let train = read_manifest(train_manifest)?;
    let test = read_manifest(test_manifest)?;
    leakage_check(&train, &test)?;
    if test.is_empty() {
        return Err(CliError::invalid("test manifest is empty"));
    }
    let class_names = if settings.class_names.is_empty() {
        train
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        settings.class_names.clone()
    };
    let labels = test
        .iter()
        .map(|e| {
            class_names
                .iter()
                .position(|c| *c == e.label)
                .ok_or_else(|| CliError::invalid(format!("{}: label {:?} not among class names", e.audio_id, e.label)))
        })
        .collect::<Result<Vec<usize>, _>>()?;

    let mut recorder = RunRecorder::start("zeroshot", cfg, settings.seed);
    for p in [checkpoint, train_manifest, test_manifest] {
        recorder.input(p)?;
    }
    let teacher = cfg.teacher.build()?;
    let model = TrainedModel::from_checkpoint(&read_checkpoint(checkpoint)?, 0.0)?;
    let texts = report_texts(&train, settings);
    let index = build_retrieval_index(&model, &train, &texts, settings.index_source, teacher.as_ref())?;
    let zs_cfg = ZeroShotConfig {
        k: settings.k,
        aggregation: settings.aggregation,
        class_names: class_names.clone(),
    };
    let classifier = ZeroShot::new(zs_cfg, &index, &texts, teacher.as_ref())?;
    let queries = embed_entries(&model, &test, EmbedSpace::Shared)?;
    let results = queries
        .par_iter()
        .map(|(_, q)| classifier.classify(q))
        .collect::<Result<Vec<_>, _>>()?;

    let scores = Matrix::from_rows(&results.iter().map(|r| r.scores.clone()).collect::<Vec<_>>())?;
    let auroc = auroc_macro(&scores, &labels)?;
    let correct = results.iter().zip(&labels).filter(|(r, &l)| r.label == l).count();
    let summary = ZeroShotSummary {
        auroc,
        accuracy: correct as f64 / labels.len() as f64,
        k: settings.k,
        index_source: settings.index_source,
        shuffle_reports: settings.shuffle_reports,
        class_names: class_names.clone(),
        train: train.len(),
        test: test.len(),
    };

    create_dir(out)?;
    save_report_index(&out.join(INDEX_FILE), &index, &texts)?;
    let mut w = BufWriter::new(fs::File::create(out.join("predictions.jsonl"))?);
    for ((id, _), (r, &l)) in queries.iter().zip(results.iter().zip(&labels)) {
        let line = serde_json::json!({
            "audio_id": id,
            "label": class_names[l],
            "predicted": class_names[r.label],
            "scores": r.scores,
            "retrieved": r.retrieved.iter().map(|(i, _)| i).collect::<Vec<_>>(),
        });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    write_json(&out.join(ZEROSHOT_JSON), &summary)?;
    write_results_csv(
        fs::File::create(out.join(RESULTS_CSV))?,
        &[("zeroshot".to_string(), EvalResult::from_values("auroc", vec![auroc])?)],
    )?;
    for a in [ZEROSHOT_JSON, RESULTS_CSV, "predictions.jsonl", INDEX_FILE] {
        recorder.artifact(a);
    }
    recorder.artifact(format!("{INDEX_FILE}.reports.jsonl"));
    recorder.finish(out)?;
    Ok(summary)
}
