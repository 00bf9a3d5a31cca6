use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use auscult_core::eval::{loso_cv, multi_seed, probe_auroc, subject_split, write_results_csv, EvalResult, ProbeConfig};
use auscult_core::numerics::Matrix;
use auscult_core::reports::{ManifestEntry, MetaValue};
use auscult_core::teacher::load_vectors;
use serde::Serialize;

use super::{create_dir, read_manifest, write_json, METADATA_FILE};
use crate::config::{Config, ProbeSettings, TaskKind};
use crate::manifest::RunRecorder;
use crate::CliError;

pub const RESULTS_CSV: &str = "results.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub task: String,
    pub kind: TaskKind,
    pub samples: usize,
    pub result: EvalResult,
}

fn subjects_of(entries: &[ManifestEntry]) -> Vec<String> {
    entries
        .iter()
        .map(|e| e.subject_id.clone().unwrap_or_else(|| e.audio_id.clone()))
        .collect()
}

/// Class indices over the sorted distinct labels.
pub fn class_indices(entries: &[ManifestEntry]) -> (Vec<String>, Vec<usize>) {
    let names: Vec<String> = entries
        .iter()
        .map(|e| e.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = entries
        .iter()
        .map(|e| names.binary_search(&e.label).expect("label from the same set"))
        .collect();
    (names, labels)
}

/// Numeric metadata field `key` per entry, read from the metadata file that
/// sits next to the manifest.
fn regression_targets(manifest: &Path, entries: &[ManifestEntry], key: &str) -> Result<Vec<f64>, CliError> {
    let path = manifest.with_file_name(METADATA_FILE);
    let file = fs::File::open(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let mut values = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let id = v["audio_id"].as_str().unwrap_or_default().to_string();
        let fields: Vec<(String, MetaValue)> = serde_json::from_value(v["metadata"]["fields"].clone())?;
        if let Some((_, MetaValue::Number(x))) = fields.iter().find(|(k, _)| k == key) {
            values.insert(id, *x);
        }
    }
    entries
        .iter()
        .map(|e| {
            values
                .get(&e.audio_id)
                .copied()
                .ok_or_else(|| CliError::invalid(format!("{}: no numeric {key:?} in metadata", e.audio_id)))
        })
        .collect()
}

/// Linear-probe evaluation of `features` (rows in `entries` order).
///
/// Classification: per seed, a subject-disjoint split and a probe with that
/// seed; the metric is macro AUROC on the held-out subjects. Regression:
/// leave-one-subject-out MAE per seed.
pub fn evaluate_features(
    features: &Matrix,
    entries: &[ManifestEntry],
    targets: Option<&[f64]>,
    settings: &ProbeSettings,
) -> Result<EvalResult, CliError> {
    let subjects = subjects_of(entries);
    let with_seed = |seed: u64| ProbeConfig {
        seed,
        ..settings.config.clone()
    };
    let result = match (settings.kind, targets) {
        (TaskKind::Classification, _) => {
            let (names, labels) = class_indices(entries);
            if names.len() < 2 {
                return Err(CliError::invalid("classification needs at least two labels"));
            }
            multi_seed("auroc", &settings.seeds, |seed| {
                let (train, test) = subject_split(&subjects, settings.test_fraction, seed)?;
                probe_auroc(features, &labels, names.len(), &train, &test, &with_seed(seed))
            })?
        }
        (TaskKind::Regression, Some(t)) => multi_seed("mae", &settings.seeds, |seed| {
            Ok(loso_cv(features, &subjects, t, &with_seed(seed))?.mean_mae)
        })?,
        (TaskKind::Regression, None) => return Err(CliError::invalid("regression needs targets")),
    };
    Ok(result)
}

/// Probes the embeddings against the manifest's labels and writes
/// `results.csv`, `runs.jsonl` and `summary.json` into `out`.
pub fn cmd_probe(cfg: &Config, embeddings: &Path, manifest: &Path, out: &Path) -> Result<ProbeSummary, CliError> {
    let settings = &cfg.probe;
    if settings.seeds.is_empty() {
        return Err(CliError::invalid("probe.seeds is empty"));
    }
    let entries = read_manifest(manifest)?;
    let mut by_id: BTreeMap<String, Vec<f64>> = load_vectors(embeddings, None)?.into_iter().collect();
    let rows: Vec<Vec<f64>> = entries
        .iter()
        .map(|e| by_id.remove(&e.audio_id))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::invalid("embedding ids do not cover the manifest"))?;
    if !by_id.is_empty() {
        return Err(CliError::invalid(format!(
            "{} embeddings have no manifest entry (first: {:?})",
            by_id.len(),
            by_id.keys().next().expect("non-empty")
        )));
    }
    let features = Matrix::from_rows(&rows)?;
    let targets = match settings.kind {
        TaskKind::Regression => Some(regression_targets(manifest, &entries, &settings.task)?),
        TaskKind::Classification => None,
    };

    let mut recorder = RunRecorder::start("probe", cfg, settings.config.seed);
    recorder.input(embeddings)?;
    recorder.input(manifest)?;
    let result = evaluate_features(&features, &entries, targets.as_deref(), settings)?;

    create_dir(out)?;
    write_results_csv(fs::File::create(out.join(RESULTS_CSV))?, &[(settings.task.clone(), result.clone())])?;
    let mut runs = BufWriter::new(fs::File::create(out.join("runs.jsonl"))?);
    for (seed, value) in settings.seeds.iter().zip(&result.values) {
        let line = serde_json::json!({ "task": settings.task, "metric": result.metric, "seed": seed, "value": value });
        writeln!(runs, "{line}")?;
    }
    runs.flush()?;
    let summary = ProbeSummary {
        task: settings.task.clone(),
        kind: settings.kind,
        samples: entries.len(),
        result,
    };
    write_json(&out.join("summary.json"), &summary)?;
    for a in [RESULTS_CSV, "runs.jsonl", "summary.json"] {
        recorder.artifact(a);
    }
    recorder.finish(out)?;
    Ok(summary)
}
